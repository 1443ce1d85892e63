# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Lunar crater catalogs and their projection onto a global,
equirectangular moon mosaic.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EmptyCatalog, InvalidParameter, InvalidRange, MissingColumn, OffMosaic, PolarRegion
from .raster import PixelRect, Raster

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

#: The mean lunar radius in meters.
MOON_RADIUS_M = 1737400.0


class CraterRecord(NamedTuple):
    """A catalog crater.  Latitude and longitude are in degrees, the
    diameter is in kilometers.
    """

    lat: float
    lon: float
    diameter: float


class CatalogSchema(NamedTuple):
    lat_column: str = "LAT_CIRC_IMG"
    lon_column: str = "LON_CIRC_IMG"
    diameter_column: str = "DIAM_CIRC_IMG"
    delimiter: str = ","

    def validate(self) -> "CatalogSchema":
        columns = {self.lat_column, self.lon_column, self.diameter_column}
        if len(columns) != 3:
            raise InvalidParameter("catalog columns must be three distinct names")

        if len(self.delimiter) != 1:
            raise InvalidParameter(f"catalog delimiter must be a single character, got {self.delimiter!r}")

        return self


class ParsedCatalog(NamedTuple):
    records: List[CraterRecord]
    skipped: int


class MoonProjection:
    """An equirectangular projection of the whole moon onto a
    ``mosaic_w x mosaic_h`` image.

    Parameters:
      mosaic_w: The width of the mosaic in pixels.
      mosaic_h: The height of the mosaic in pixels.  Must be half the
        width, within 1%.
      meters_per_pixel: The ground resolution at the equator.
      max_abs_lat: Craters beyond this latitude are rejected.
    """

    __slots__ = ["mosaic_w", "mosaic_h", "meters_per_pixel", "max_abs_lat"]

    def __init__(self, mosaic_w: int, mosaic_h: int, meters_per_pixel: float, max_abs_lat: float = 85.0) -> None:
        if mosaic_w <= 0 or mosaic_h <= 0:
            raise InvalidParameter(f"mosaic dimensions must be positive, got {mosaic_w}x{mosaic_h}")

        if abs(mosaic_w / mosaic_h - 2.0) > 0.02:
            raise InvalidParameter(f"a global mosaic must be twice as wide as it is tall, got {mosaic_w}x{mosaic_h}")

        if not meters_per_pixel > 0:
            raise InvalidParameter(f"meters_per_pixel must be positive, got {meters_per_pixel}")

        if not 0 < max_abs_lat < 90:
            raise InvalidParameter(f"max_abs_lat must be in (0, 90), got {max_abs_lat}")

        self.mosaic_w = mosaic_w
        self.mosaic_h = mosaic_h
        self.meters_per_pixel = float(meters_per_pixel)
        self.max_abs_lat = float(max_abs_lat)

    @classmethod
    def for_mosaic(
            cls,
            mosaic_w: int,
            mosaic_h: int,
            meters_per_pixel: Optional[float] = None,
            max_abs_lat: float = 85.0,
    ) -> "MoonProjection":
        """Build the projection for a mosaic, deriving the resolution
        from the lunar circumference when it isn't given.
        """
        if meters_per_pixel is None:
            meters_per_pixel = 2 * math.pi * MOON_RADIUS_M / mosaic_w
        return cls(mosaic_w, mosaic_h, meters_per_pixel, max_abs_lat)

    def __repr__(self) -> str:
        return (f"MoonProjection(mosaic_w={self.mosaic_w}, mosaic_h={self.mosaic_h}, "
                f"meters_per_pixel={self.meters_per_pixel}, max_abs_lat={self.max_abs_lat})")


def _parse_row(row: Sequence[str], indices: Tuple[int, int, int]) -> Optional[CraterRecord]:
    try:
        lat, lon, diameter = (float(row[index]) for index in indices)
    except (IndexError, ValueError):
        return None

    if not all(math.isfinite(value) for value in (lat, lon, diameter)):
        return None

    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon < 360.0 or diameter <= 0:
        return None

    if lon >= 180.0:
        lon -= 360.0

    return CraterRecord(lat, lon, diameter)


def parse_crater_catalog(text: Iterable[str], schema: CatalogSchema = CatalogSchema()) -> ParsedCatalog:
    """Parse a delimiter-separated crater catalog in a single pass.

    Rows with missing, non-numeric or out-of-range values are skipped
    and counted.  Longitudes in [180, 360) are wrapped to [-180, 0).

    Raises:
      MissingColumn: If the header lacks one of the schema's columns.
      EmptyCatalog: If no row is valid.
    """
    schema.validate()
    reader = csv.reader(text, delimiter=schema.delimiter)
    header = [name.strip() for name in next(reader, [])]
    columns = (schema.lat_column, schema.lon_column, schema.diameter_column)
    for column in columns:
        if column not in header:
            raise MissingColumn(f"catalog header lacks column {column!r}")

    indices = (header.index(columns[0]), header.index(columns[1]), header.index(columns[2]))
    records, skipped = [], 0
    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue

        record = _parse_row(row, indices)
        if record is None:
            LOGGER.debug("Skipping catalog row %s.", reader.line_num)
            skipped += 1
        else:
            records.append(record)

    if skipped:
        LOGGER.warning("Skipped %d malformed catalog rows.", skipped)

    if not records:
        raise EmptyCatalog("catalog has no valid rows")

    return ParsedCatalog(records, skipped)


def load_crater_catalog(path: PathLike, schema: CatalogSchema = CatalogSchema()) -> ParsedCatalog:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_crater_catalog(f, schema)


def crater_to_pixel_box(rec: CraterRecord, proj: MoonProjection) -> PixelRect:
    """Project a crater onto the mosaic.

    The box is as tall as the crater's diameter and ``1 / cos(lat)``
    times wider, to undo the equirectangular stretch.  Corners are
    rounded to the nearest pixel and clamped to the mosaic.

    Raises:
      PolarRegion: If the crater lies beyond the projection's latitude limit.
      OffMosaic: If nothing of the box is left after clamping.
    """
    if abs(rec.lat) > proj.max_abs_lat:
        raise PolarRegion(f"latitude {rec.lat} exceeds the {proj.max_abs_lat} degree limit")

    cx = (rec.lon + 180.0) / 360.0 * proj.mosaic_w
    cy = (90.0 - rec.lat) / 180.0 * proj.mosaic_h
    height = rec.diameter * 1000.0 / proj.meters_per_pixel
    width = height / math.cos(math.radians(rec.lat))

    x0, x1 = _clamp_span(cx - width / 2, cx + width / 2, proj.mosaic_w)
    y0, y1 = _clamp_span(cy - height / 2, cy + height / 2, proj.mosaic_h)
    if x1 <= x0 or y1 <= y0:
        raise OffMosaic(f"crater at ({rec.lat}, {rec.lon}) falls off the mosaic")

    return PixelRect(x0, y0, x1 - x0, y1 - y0)


def _clamp_span(lo: float, hi: float, size: int) -> Tuple[int, int]:
    if hi <= 0 or lo >= size:
        return 0, 0

    start = min(max(math.floor(lo + 0.5), 0), size)
    end = min(max(math.floor(hi + 0.5), 0), size)
    if end <= start:
        # Sub-pixel craters still get one pixel.
        start = min(start, size - 1)
        end = start + 1
    return start, end


def pixel_to_lonlat(x: float, y: float, proj: MoonProjection) -> Tuple[float, float]:
    """Returns the (lat, lon) of a mosaic pixel position.
    """
    lon = x / proj.mosaic_w * 360.0 - 180.0
    lat = 90.0 - y / proj.mosaic_h * 180.0
    return lat, lon


def lonlat_to_pixel(lat: float, lon: float, proj: MoonProjection) -> Tuple[float, float]:
    return (lon + 180.0) / 360.0 * proj.mosaic_w, (90.0 - lat) / 180.0 * proj.mosaic_h


def filter_by_diameter(records: Iterable[CraterRecord], d_min: float = 0.4, d_max: float = 5.0) -> List[CraterRecord]:
    """Keep the craters whose diameter lies in [d_min, d_max] km.

    Raises:
      InvalidRange: Unless 0 < d_min <= d_max.
    """
    if not 0 < d_min <= d_max:
        raise InvalidRange(f"diameter range [{d_min}, {d_max}] is invalid")
    return [record for record in records if d_min <= record.diameter <= d_max]


def project_catalog(records: Iterable[CraterRecord], proj: MoonProjection) -> List[PixelRect]:
    """Project every crater that can be projected, skipping polar and
    off-mosaic ones.
    """
    boxes, polar, off = [], 0, 0
    for record in records:
        try:
            boxes.append(crater_to_pixel_box(record, proj))
        except PolarRegion:
            polar += 1
        except OffMosaic:
            off += 1

    if polar or off:
        LOGGER.warning("Skipped %d polar and %d off-mosaic craters.", polar, off)
    return boxes


def disk_contrast(mosaic: Raster, box: PixelRect) -> float:
    """Returns the absolute difference between the mean gray level of
    the box's inscribed disk and that of the surrounding annulus
    (1 to 1.5 inscribed radii), clipped to the image.  Zero when
    either region has no pixels.
    """
    radius = min(box.w, box.h) / 2.0
    cx, cy = box.x + box.w / 2.0, box.y + box.h / 2.0
    outer = 1.5 * radius
    x0, x1 = max(int(math.floor(cx - outer)), 0), min(int(math.ceil(cx + outer)), mosaic.width)
    y0, y1 = max(int(math.floor(cy - outer)), 0), min(int(math.ceil(cy + outer)), mosaic.height)
    if x1 <= x0 or y1 <= y0:
        return 0.0

    window = mosaic.pixels[y0:y1, x0:x1].astype(np.float64)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    distance = np.hypot(xs + 0.5 - cx, ys + 0.5 - cy)
    inner = distance <= radius
    ring = (distance > radius) & (distance <= outer)
    if not inner.any() or not ring.any():
        return 0.0

    return float(abs(window[ring].mean() - window[inner].mean()))


def prune_by_contrast(mosaic: Raster, boxes: Iterable[PixelRect], delta: float = 10.0) -> List[PixelRect]:
    """Keep the boxes whose disk-versus-annulus contrast is at least ``delta``.
    """
    kept, dropped = [], 0
    for box in boxes:
        if disk_contrast(mosaic, box) >= delta:
            kept.append(box)
        else:
            dropped += 1

    LOGGER.debug("Pruned %d low-contrast craters, kept %d.", dropped, len(kept))
    return kept

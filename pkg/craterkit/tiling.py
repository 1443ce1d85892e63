# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Cutting large rasters into fixed-size, overlapping tiles.

Edge tiles are shifted inward rather than padded, so every tile has
the same size and only ever contains real pixels.
"""

import logging
import re
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, ParseError, TileLargerThanImage
from .files import atomic_write
from .raster import PixelRect, Raster
from .typing import Origin

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

_TILE_NAME_RE = re.compile(r"^(?P<stem>.+)_x(?P<x>\d+)_y(?P<y>\d+)$")


class TileGrid(NamedTuple):
    """A tiling plan for one parent image.
    """

    tile_size: int
    overlap: int
    origins: Tuple[Origin, ...]
    parent_w: int
    parent_h: int

    @property
    def stride(self) -> int:
        return self.tile_size - self.overlap

    def has_origin(self, origin: Origin) -> bool:
        return (int(origin[0]), int(origin[1])) in self.origins

    def window(self, origin: Origin) -> PixelRect:
        return PixelRect(origin[0], origin[1], self.tile_size, self.tile_size)


class Tile(NamedTuple):
    origin: Origin
    img: Raster


def _axis_origins(dim: int, tile_size: int, stride: int) -> List[int]:
    origins, position = [], 0
    while True:
        if position + tile_size >= dim:
            origins.append(dim - tile_size)
            break
        origins.append(position)
        position += stride

    # The clamped origin may coincide with the last regular one.
    return sorted(set(origins))


def plan_tiles(parent_w: int, parent_h: int, tile_size: int = 512, overlap: int = 64) -> TileGrid:
    """Plan the tiles covering a ``parent_w x parent_h`` image.

    Origins step by ``tile_size - overlap`` along each axis; the last
    origin on an axis is clamped to ``dim - tile_size``.  Origins are
    sorted row-major.

    Raises:
      TileLargerThanImage: If the tile doesn't fit in the parent.
      InvalidParameter: If the tile size or overlap is invalid.
    """
    if tile_size <= 0:
        raise InvalidParameter(f"tile_size must be positive, got {tile_size}")

    if not 0 <= overlap < tile_size:
        raise InvalidParameter(f"overlap must be in [0, {tile_size}), got {overlap}")

    if tile_size > min(parent_w, parent_h):
        raise TileLargerThanImage(f"{tile_size}px tiles don't fit a {parent_w}x{parent_h} image")

    stride = tile_size - overlap
    xs = _axis_origins(parent_w, tile_size, stride)
    ys = _axis_origins(parent_h, tile_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return TileGrid(tile_size, overlap, origins, parent_w, parent_h)


def extract_tiles(img: Raster, grid: TileGrid) -> List[Tile]:
    """Cut ``img`` into the tiles of ``grid``, in grid order.

    Raises:
      DimensionMismatch: If the grid was planned for another size.
    """
    if img.dims != (grid.parent_w, grid.parent_h):
        raise DimensionMismatch(
            f"grid planned for {grid.parent_w}x{grid.parent_h} but image is {img.width}x{img.height}"
        )

    size = grid.tile_size
    return [Tile((x, y), Raster(img.pixels[y:y + size, x:x + size])) for x, y in grid.origins]


def assemble_tiles(tiles: Iterable[Tile], grid: TileGrid) -> Raster:
    """Write tiles back at their origins.  The inverse of extract_tiles.
    """
    canvas = np.zeros((grid.parent_h, grid.parent_w), dtype=np.uint8)
    size = grid.tile_size
    for tile in tiles:
        if tile.img.dims != (size, size):
            raise DimensionMismatch(f"tile at {tile.origin} is {tile.img.width}x{tile.img.height}, not {size}px")

        x, y = tile.origin
        canvas[y:y + size, x:x + size] = tile.img.pixels
    return Raster(canvas)


def tile_box_to_parent(box: PixelRect, origin: Origin) -> PixelRect:
    return box.translate(origin[0], origin[1])


def tile_name(parent_stem: str, origin: Origin) -> str:
    """Returns the stem of the tile at ``origin``: ``<parent>_x<x>_y<y>``.
    """
    return f"{parent_stem}_x{origin[0]}_y{origin[1]}"


def parse_tile_name(stem: str) -> Optional[Tuple[str, Origin]]:
    """Split a tile stem into its parent stem and origin.  Returns
    None for stems that don't follow the tile naming convention.
    """
    match = _TILE_NAME_RE.match(stem)
    if match is None:
        return None
    return match.group("stem"), (int(match.group("x")), int(match.group("y")))


def write_grid(grid: TileGrid, path: PathLike) -> None:
    """Write the grid's origins as a ``.tiles`` sidecar.
    """
    with atomic_write(path) as f:
        for x, y in grid.origins:
            f.write(f"{x} {y}\n")


def read_origins(path: PathLike) -> List[Origin]:
    """Read the origins listed in a ``.tiles`` sidecar.

    Raises:
      ParseError: On malformed lines.
    """
    origins = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue

            fields = line.split()
            try:
                if len(fields) != 2:
                    raise ValueError
                x, y = int(fields[0]), int(fields[1])
            except ValueError:
                raise ParseError(f"expected 'x y' but found {line.strip()!r}", str(path), lineno)

            if x < 0 or y < 0:
                raise ParseError(f"negative origin {x} {y}", str(path), lineno)

            origins.append((x, y))
    return origins


def read_grid(
        path: PathLike,
        tile_size: int,
        overlap: int,
        parent_w: Optional[int] = None,
        parent_h: Optional[int] = None,
) -> TileGrid:
    """Rebuild a grid from a ``.tiles`` sidecar.  The sidecar only
    carries origins.  Edge tiles always touch the parent's far edges,
    so the parent size defaults to the last origin plus the tile size.

    Raises:
      ParseError: If the sidecar is empty or an origin doesn't fit
        inside the parent.
    """
    origins = read_origins(path)
    if not origins:
        raise ParseError("tile sidecar lists no origins", str(path))

    if parent_w is None:
        parent_w = max(x for x, _ in origins) + tile_size
    if parent_h is None:
        parent_h = max(y for _, y in origins) + tile_size

    for x, y in origins:
        if x + tile_size > parent_w or y + tile_size > parent_h:
            raise ParseError(f"tile at {x} {y} exceeds the {parent_w}x{parent_h} parent", str(path))

    origins.sort(key=lambda origin: (origin[1], origin[0]))
    return TileGrid(tile_size, overlap, tuple(origins), parent_w, parent_h)


def coverage(grid: TileGrid) -> np.ndarray:
    """Count, per parent pixel, the tiles that contain it.
    """
    counts = np.zeros((grid.parent_h, grid.parent_w), dtype=np.int32)
    size = grid.tile_size
    for x, y in grid.origins:
        counts[y:y + size, x:x + size] += 1
    return counts


def origins_on_axis(grid: TileGrid, axis: int) -> Sequence[int]:
    return sorted({origin[axis] for origin in grid.origins})

# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Normalized box annotations and the label file format.

A label file holds one object per line::

  0 0.500000 0.500000 0.100000 0.200000

that is the class id followed by the box center and size, normalized
to the image and printed with six decimals.
"""

import logging
import math
from pathlib import Path
from typing import IO, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import InvalidParameter, ParseError, RangeError
from .files import atomic_write
from .raster import PixelRect
from .typing import Corners, Dims, Origin

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

#: The only class used by craterkit.
CRATER = 0

#: How far a box may stick out of the unit square.
UNIT_TOLERANCE = 1e-6 + 1e-12


class _AnnotationFields(NamedTuple):
    class_id: int
    cx: float
    cy: float
    w: float
    h: float


class Annotation(_AnnotationFields):
    """A class-labeled box, normalized to the image it belongs to.

    Raises:
      RangeError: When a coordinate is out of range.
    """

    __slots__ = ()

    def __new__(cls, class_id: int, cx: float, cy: float, w: float, h: float) -> "Annotation":
        if isinstance(class_id, bool) or int(class_id) != class_id or class_id < 0:
            raise RangeError(f"class id must be a non-negative integer, got {class_id!r}")

        cx, cy, w, h = float(cx), float(cy), float(w), float(h)
        if not all(math.isfinite(v) for v in (cx, cy, w, h)):
            raise RangeError("coordinates must be finite")

        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise RangeError(f"center ({cx}, {cy}) lies outside the unit square")

        if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise RangeError(f"size ({w}, {h}) must be in (0, 1]")

        if (cx - w / 2 < -UNIT_TOLERANCE or cx + w / 2 > 1.0 + UNIT_TOLERANCE
                or cy - h / 2 < -UNIT_TOLERANCE or cy + h / 2 > 1.0 + UNIT_TOLERANCE):
            raise RangeError(f"box ({cx}, {cy}, {w}, {h}) exceeds the unit square")

        return super().__new__(cls, int(class_id), cx, cy, w, h)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float, class_id: int = CRATER) -> "Annotation":
        """Build an annotation from normalized corners, clamped to the
        unit square.
        """
        x0, y0 = min(max(x0, 0.0), 1.0), min(max(y0, 0.0), 1.0)
        x1, y1 = min(max(x1, 0.0), 1.0), min(max(y1, 0.0), 1.0)
        return cls(class_id, (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @classmethod
    def from_pixel_rect(cls, rect: PixelRect, dims: Dims, class_id: int = CRATER) -> "Annotation":
        width, height = dims
        return cls(class_id, (rect.x + rect.w / 2) / width, (rect.y + rect.h / 2) / height,
                   rect.w / width, rect.h / height)

    @property
    def corners(self) -> Corners:
        """The normalized (x0, y0, x1, y1) corners of the box.
        """
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def pixel_corners(self, dims: Dims) -> Corners:
        """The box's corners in the pixel frame of a ``dims``-sized image.
        """
        width, height = dims
        x0, y0, x1, y1 = self.corners
        return (x0 * width, y0 * height, x1 * width, y1 * height)

    @property
    def sort_key(self) -> Corners:
        return (self.cx, self.cy, self.w, self.h)


def corners_iou(a: Corners, b: Corners) -> float:
    """Intersection over union of two (x0, y0, x1, y1) boxes.
    """
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0

    intersection = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - intersection
    return min(intersection / union, 1.0) if union > 0 else 0.0


def iou_against(box: Corners, boxes: np.ndarray) -> np.ndarray:
    """Returns the IoU of one box against an (n, 4) array of boxes.
    """
    if boxes.size == 0:
        return np.zeros(0, dtype=np.float64)

    iw = np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0])
    ih = np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1])
    intersection = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = (box[2] - box[0]) * (box[3] - box[1]) + areas - intersection
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, np.minimum(intersection / union, 1.0), 0.0)


def project_corners(corners: Corners, tile_origin: Origin, tile_size: int,
                    min_visible: float = 0.4) -> Optional[Annotation]:
    """Project a parent-frame box, given by its pixel corners, onto a tile.

    The box is clipped to the tile window.  It is kept, re-tightened
    to its visible part, when at least ``min_visible`` of its area is
    inside the tile.

    Raises:
      InvalidParameter: If min_visible isn't in (0, 1].
    """
    if not 0.0 < min_visible <= 1.0:
        raise InvalidParameter(f"min_visible must be in (0, 1], got {min_visible}")

    bx0, by0, bx1, by1 = corners
    area = (bx1 - bx0) * (by1 - by0)
    if bx1 <= bx0 or by1 <= by0:
        return None

    tx, ty = tile_origin
    x0, y0 = max(bx0, tx), max(by0, ty)
    x1, y1 = min(bx1, tx + tile_size), min(by1, ty + tile_size)
    if x1 <= x0 or y1 <= y0:
        return None

    if (x1 - x0) * (y1 - y0) < min_visible * area:
        return None

    return Annotation.from_corners(
        (x0 - tx) / tile_size, (y0 - ty) / tile_size, (x1 - tx) / tile_size, (y1 - ty) / tile_size,
    )


def project_to_tile(box: PixelRect, tile_origin: Origin, tile_size: int,
                    min_visible: float = 0.4) -> Optional[Annotation]:
    return project_corners((box.x, box.y, box.x2, box.y2), tile_origin, tile_size, min_visible)


def project_boxes(boxes: Iterable[Corners], tile_origin: Origin, tile_size: int,
                  min_visible: float = 0.4) -> List[Annotation]:
    labels = []
    for corners in boxes:
        annotation = project_corners(corners, tile_origin, tile_size, min_visible)
        if annotation is not None:
            labels.append(annotation)
    return labels


def transfer_annotations(labels: Sequence[Annotation], src_dims: Dims, dst_dims: Dims) -> List[Annotation]:
    """Carry labels over to a translated image.  Translators preserve
    geometry and labels are normalized, so this is the identity.

    Raises:
      InvalidParameter: If either size isn't positive.
    """
    for dims in (src_dims, dst_dims):
        if dims[0] <= 0 or dims[1] <= 0:
            raise InvalidParameter(f"image dimensions must be positive, got {dims}")

    if tuple(src_dims) != tuple(dst_dims):
        LOGGER.debug("Transferring %d labels from %s to %s.", len(labels), src_dims, dst_dims)

    return list(labels)


def format_label(annotation: Annotation) -> str:
    return (f"{annotation.class_id} {annotation.cx:.6f} {annotation.cy:.6f} "
            f"{annotation.w:.6f} {annotation.h:.6f}\n")


def write_labels(labels: Iterable[Annotation], sink: IO[str]) -> None:
    for annotation in labels:
        sink.write(format_label(annotation))


def parse_fields(line: str, count: int, path: Optional[str], lineno: int) -> List[float]:
    """Split a label-style line into its class id and numeric fields.

    Raises:
      ParseError: When the line has the wrong shape.
    """
    fields = line.split()
    if len(fields) != count:
        raise ParseError(f"expected {count} fields but found {len(fields)}", path, lineno)

    try:
        class_id = int(fields[0], 10)
        values = [float(field) for field in fields[1:]]
    except ValueError:
        raise ParseError(f"malformed line {line.strip()!r}", path, lineno)

    if not all(math.isfinite(value) for value in values):
        raise ParseError(f"non-finite value in {line.strip()!r}", path, lineno)

    return [class_id, *values]


def read_labels(source: IO[str], path: Optional[str] = None) -> List[Annotation]:
    """Read a label file.  Blank lines are ignored.

    Raises:
      ParseError: On malformed lines.
      RangeError: On out-of-range coordinates.
    """
    path = path or getattr(source, "name", None)
    labels = []
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue

        class_id, cx, cy, w, h = parse_fields(line, 5, path, lineno)
        try:
            labels.append(Annotation(int(class_id), cx, cy, w, h))
        except RangeError as e:
            raise RangeError(e.message, path, lineno)
    return labels


def save_labels(path: PathLike, labels: Iterable[Annotation]) -> None:
    with atomic_write(path) as f:
        write_labels(labels, f)


def load_labels(path: PathLike) -> List[Annotation]:
    """Load a label file.  A missing file means no labels.
    """
    try:
        with open(path, encoding="utf-8") as f:
            return read_labels(f, str(path))
    except FileNotFoundError:
        return []

# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Crater detections, the baseline blob detector, non-maximum
suppression and the external detector adapter.

Detection files extend the label format with a confidence::

  0 0.500000 0.500000 0.100000 0.200000 0.870000
"""

import logging
from concurrent.futures import Executor
from pathlib import Path
from typing import IO, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from typing_extensions import Protocol

from .annotate import Annotation, iou_against, parse_fields
from .errors import InvalidParameter, RangeError, UnknownOrigin
from .external import require_placeholders, run_command
from .files import atomic_write, list_images
from .log import set_stage
from .raster import Raster, read_png
from .tiling import TileGrid
from .typing import Origin

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

#: Mean absolute deviation that maps to full confidence.
CONFIDENCE_SCALE = 64.0


class _DetectionFields(NamedTuple):
    ann: Annotation
    confidence: float


class Detection(_DetectionFields):
    """An annotation scored by a detector.

    Raises:
      RangeError: If the confidence isn't in [0, 1].
    """

    __slots__ = ()

    def __new__(cls, ann: Annotation, confidence: float) -> "Detection":
        confidence = float(confidence)
        if not 0.0 <= confidence <= 1.0:
            raise RangeError(f"confidence must be in [0, 1], got {confidence}")
        return super().__new__(cls, ann, confidence)

    @property
    def rank_key(self) -> Tuple[float, float, float, float, float]:
        """Sorts detections by descending confidence, then by box.
        """
        return (-self.confidence, *self.ann.sort_key)


class DetectorParams(NamedTuple):
    blur_radius: int = 1
    local_window: int = 81
    threshold_offset: float = 48.0
    min_area: int = 36
    max_area: int = 16384
    max_aspect: float = 2.5

    def validate(self) -> "DetectorParams":
        if self.blur_radius < 0:
            raise InvalidParameter(f"blur_radius must be >= 0, got {self.blur_radius}")

        if self.local_window < 3 or self.local_window % 2 == 0:
            raise InvalidParameter(f"local_window must be odd and >= 3, got {self.local_window}")

        if not self.min_area < self.max_area:
            raise InvalidParameter(f"min_area ({self.min_area}) must be below max_area ({self.max_area})")

        if self.max_aspect < 1:
            raise InvalidParameter(f"max_aspect must be >= 1, got {self.max_aspect}")

        return self


def sort_detections(dets: Iterable[Detection]) -> List[Detection]:
    return sorted(dets, key=lambda det: det.rank_key)


def detect_blobs(img: Raster, p: DetectorParams = DetectorParams()) -> List[Detection]:
    """Find crater candidates as blobs that stand out from their
    neighbourhood.

    The image is box-blurred, every pixel is compared with the mean of
    its ``local_window`` neighbourhood, and pixels deviating by at least
    ``threshold_offset`` in either direction are grouped into
    4-connected components.  Components whose bounding box passes the
    area and aspect filters become detections scored by their mean
    absolute deviation.
    """
    p.validate()
    pixels = img.pixels.astype(np.float64)
    if p.blur_radius > 0:
        pixels = ndimage.uniform_filter(pixels, size=2 * p.blur_radius + 1, mode="reflect")

    deviation = pixels - ndimage.uniform_filter(pixels, size=p.local_window, mode="reflect")
    magnitude = np.abs(deviation)
    labels, count = ndimage.label(magnitude >= p.threshold_offset)
    if count == 0:
        return []

    strengths = ndimage.mean(magnitude, labels=labels, index=np.arange(1, count + 1))
    dims = img.dims
    detections = []
    for index, window in enumerate(ndimage.find_objects(labels)):
        if window is None:
            continue

        rows, cols = window
        h, w = rows.stop - rows.start, cols.stop - cols.start
        if not p.min_area <= w * h <= p.max_area or max(w, h) / min(w, h) > p.max_aspect:
            continue

        ann = Annotation(0, (cols.start + w / 2) / dims[0], (rows.start + h / 2) / dims[1], w / dims[0], h / dims[1])
        detections.append(Detection(ann, min(1.0, float(strengths[index]) / CONFIDENCE_SCALE)))

    return sort_detections(detections)


def _corner_array(dets: Sequence[Detection]) -> np.ndarray:
    return np.array([det.ann.corners for det in dets], dtype=np.float64).reshape(-1, 4)


def nms(dets: Iterable[Detection], iou_threshold: float = 0.5) -> List[Detection]:
    """Greedy non-maximum suppression.

    The best remaining detection is kept and every remaining detection
    overlapping it with an IoU of at least ``iou_threshold`` is dropped.
    Ties in confidence go to the lexicographically smaller box.

    Raises:
      InvalidParameter: Unless 0 < iou_threshold < 1.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise InvalidParameter(f"iou_threshold must be in (0, 1), got {iou_threshold}")

    ordered = sort_detections(dets)
    boxes = _corner_array(ordered)
    alive = np.ones(len(ordered), dtype=bool)
    kept = []
    for i, det in enumerate(ordered):
        if not alive[i]:
            continue

        kept.append(det)
        rest = np.arange(i + 1, len(ordered))
        overlaps = iou_against(boxes[i], boxes[rest])
        alive[rest[overlaps >= iou_threshold]] = False
    return kept


def _touches_interior_border(corners: Tuple[float, ...], origin: Origin, grid: TileGrid, margin: int) -> bool:
    x0, y0, x1, y1 = corners
    size = grid.tile_size
    ox, oy = origin
    return ((ox > 0 and x0 < margin)
            or (oy > 0 and y0 < margin)
            or (ox + size < grid.parent_w and x1 > size - margin)
            or (oy + size < grid.parent_h and y1 > size - margin))


def stitch_detections(
        per_tile: Iterable[Tuple[Origin, Sequence[Detection]]],
        grid: TileGrid,
        iou_threshold: float = 0.5,
        edge_margin: int = 0,
) -> List[Detection]:
    """Move tile detections into the parent frame and suppress the
    duplicates found in overlapping tiles.

    Parameters:
      per_tile: Pairs of tile origin and that tile's detections.
      grid: The grid the tiles were cut with.
      iou_threshold: The NMS threshold used to merge duplicates.
      edge_margin: When positive, detections within this many pixels
        of a tile border that lies inside the parent are dropped.  The
        overlapping neighbour sees those craters in full.

    Raises:
      UnknownOrigin: If a tile origin isn't part of the grid.
    """
    size = grid.tile_size
    parent = []
    for origin, dets in per_tile:
        if not grid.has_origin(origin):
            raise UnknownOrigin(f"tile origin {tuple(origin)} is not part of the grid")

        ox, oy = origin
        for det in dets:
            corners = det.ann.pixel_corners((size, size))
            if edge_margin > 0 and _touches_interior_border(corners, origin, grid, edge_margin):
                continue

            x0, y0, x1, y1 = corners
            ann = Annotation.from_corners(
                (x0 + ox) / grid.parent_w, (y0 + oy) / grid.parent_h,
                (x1 + ox) / grid.parent_w, (y1 + oy) / grid.parent_h,
                class_id=det.ann.class_id,
            )
            parent.append(Detection(ann, det.confidence))

    return nms(parent, iou_threshold)


def format_detection(det: Detection) -> str:
    ann = det.ann
    return f"{ann.class_id} {ann.cx:.6f} {ann.cy:.6f} {ann.w:.6f} {ann.h:.6f} {det.confidence:.6f}\n"


def write_detections(dets: Iterable[Detection], sink: IO[str]) -> None:
    for det in dets:
        sink.write(format_detection(det))


def read_detections(source: IO[str], path: Optional[str] = None) -> List[Detection]:
    """Read a detection file.  Blank lines are ignored.

    Raises:
      ParseError: On malformed lines.
      RangeError: On out-of-range coordinates or confidences.
    """
    path = path or getattr(source, "name", None)
    dets = []
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue

        class_id, cx, cy, w, h, confidence = parse_fields(line, 6, path, lineno)
        try:
            dets.append(Detection(Annotation(int(class_id), cx, cy, w, h), confidence))
        except RangeError as e:
            raise RangeError(e.message, path, lineno)
    return dets


def save_detections(path: PathLike, dets: Iterable[Detection]) -> None:
    with atomic_write(path) as f:
        write_detections(dets, f)


def load_detections(path: PathLike) -> List[Detection]:
    """Load a detection file.  A missing file means no detections.
    """
    try:
        with open(path, encoding="utf-8") as f:
            return read_detections(f, str(path))
    except FileNotFoundError:
        return []


def load_detection_dir(directory: PathLike, stems: Optional[Iterable[str]] = None) -> Dict[str, List[Detection]]:
    """Load every detection file in a directory, keyed by stem.  When
    ``stems`` is given, stems without a file get an empty list.
    """
    root = Path(directory)
    found = {path.stem: load_detections(path) for path in sorted(root.glob("*.txt"))} if root.is_dir() else {}
    for stem in stems or ():
        found.setdefault(stem, [])
    return found


def run_external_detector(
        images_dir: PathLike,
        out_dir: PathLike,
        command: str,
        model: Optional[str] = None,
        manifest: Optional[PathLike] = None,
) -> List[Path]:
    """Run an external detector over a directory of images.

    The command must use the ``{in}`` and ``{out}`` placeholders and
    may use ``{model}`` and ``{manifest}``.  Afterwards there is one
    detection file per image: stems the detector skipped get an empty
    file.

    Raises:
      InvalidParameter: If the command lacks a placeholder.
      CommandFailed: If the command fails.
      ParseError: If a detection file is malformed.
    """
    require_placeholders(command, ("in", "out"))
    images = list_images(images_dir)
    output_dir = Path(out_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    substitutions = {"in": str(images_dir), "out": str(output_dir)}
    if model is not None:
        substitutions["model"] = model
    if manifest is not None:
        substitutions["manifest"] = str(manifest)

    run_command(command, substitutions, output_dir=output_dir)

    paths, empty = [], 0
    for image in images:
        path = output_dir / f"{image.stem}.txt"
        if path.exists():
            load_detections(path)
        else:
            save_detections(path, [])
            empty += 1
        paths.append(path)

    if empty:
        LOGGER.info("Detector produced no file for %d of %d images.", empty, len(images))
    return paths


class Detector(Protocol):  # pragma: no cover
    """Detectors write one detection file per image in ``images_dir``
    to ``out_dir`` and return the paths of those files.
    """

    def detect_dir(
            self,
            images_dir: Path,
            out_dir: Path,
            model: Optional[str] = None,
            manifest: Optional[Path] = None,
    ) -> List[Path]:
        ...


class BaselineDetector:
    """Runs :func:`detect_blobs` over every image in a directory.

    Parameters:
      params: The blob detector's parameters.
      executor: Images are processed on this executor when given.
    """

    def __init__(self, params: DetectorParams = DetectorParams(), executor: Optional[Executor] = None) -> None:
        self.params = params.validate()
        self.executor = executor

    def detect_path(self, image: Path, out_dir: Path) -> Path:
        set_stage("detect", image.stem)
        path = Path(out_dir) / f"{image.stem}.txt"
        dets = detect_blobs(read_png(image), self.params)
        LOGGER.debug("Found %d candidates.", len(dets))
        save_detections(path, dets)
        return path

    def detect_dir(
            self,
            images_dir: Path,
            out_dir: Path,
            model: Optional[str] = None,
            manifest: Optional[Path] = None,
    ) -> List[Path]:
        images = list_images(images_dir)
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        if self.executor is None:
            return [self.detect_path(image, out_dir) for image in images]
        return list(self.executor.map(lambda image: self.detect_path(image, out_dir), images))


class ExternalDetector:
    def __init__(self, command: str) -> None:
        require_placeholders(command, ("in", "out"))
        self.command = command

    def detect_dir(
            self,
            images_dir: Path,
            out_dir: Path,
            model: Optional[str] = None,
            manifest: Optional[Path] = None,
    ) -> List[Path]:
        return run_external_detector(images_dir, out_dir, self.command, model=model, manifest=manifest)

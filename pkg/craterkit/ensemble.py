# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Fusing detections from several models, per image and across
georegistered images that show the same ground.

Boxes are clustered greedily in descending confidence order.  Within a
cluster every source (a model, or an image) is represented by its best
box; the fused box is the confidence-weighted mean of the
representatives and the fused confidence is their noisy-OR,
``1 - prod(1 - c)``.  Once every box is placed, clusters whose fused
boxes overlap at or above the threshold are merged, so no evidence is
dropped and no two outputs overlap.  A single source reduces to plain
NMS.
"""

import logging
from itertools import combinations
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .annotate import Annotation, corners_iou
from .detect import Detection
from .errors import InvalidParameter, ParseError, SingularTransform
from .typing import Corners, Dims

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ModelDetections(NamedTuple):
    model_name: str
    per_image: Dict[str, List[Detection]]


class _Box(NamedTuple):
    corners: Corners
    confidence: float
    source: Hashable
    class_id: int


class _Cluster:
    __slots__ = ["representatives", "corners", "confidence"]

    def __init__(self, box: _Box) -> None:
        self.representatives: Dict[Hashable, _Box] = {box.source: box}
        self.corners = box.corners
        self.confidence = box.confidence

    def add(self, box: _Box) -> None:
        if box.source in self.representatives:
            return

        self.representatives[box.source] = box
        self._refuse()

    def absorb(self, other: "_Cluster") -> None:
        """Take over another cluster's representatives, keeping the
        more confident box wherever both have one from the same source.
        """
        for source, box in other.representatives.items():
            mine = self.representatives.get(source)
            if mine is None or box.confidence > mine.confidence:
                self.representatives[source] = box

        self._refuse()

    def _refuse(self) -> None:
        members = list(self.representatives.values())
        if len(members) == 1:
            self.corners, self.confidence = members[0].corners, members[0].confidence
            return

        weights = np.array([member.confidence for member in members], dtype=np.float64)
        corners = np.array([member.corners for member in members], dtype=np.float64)
        if weights.sum() > 0:
            fused = (weights[:, np.newaxis] * corners).sum(axis=0) / weights.sum()
        else:
            fused = corners.mean(axis=0)

        self.corners = tuple(float(value) for value in fused)  # type: ignore
        self.confidence = float(1.0 - np.prod(1.0 - weights))

    @property
    def sort_key(self) -> Tuple[float, ...]:
        return (-self.confidence, *self.corners)

    @property
    def sources(self) -> Tuple[Hashable, ...]:
        return tuple(sorted(self.representatives, key=str))

    @property
    def best(self) -> _Box:
        return max(self.representatives.values(), key=lambda box: box.confidence)


def _first_overlap(clusters: Sequence[_Cluster], iou_thr: float) -> Optional[Tuple[int, int]]:
    for i, j in combinations(range(len(clusters)), 2):
        if corners_iou(clusters[i].corners, clusters[j].corners) >= iou_thr:
            return i, j
    return None


def _cluster(boxes: Iterable[_Box], iou_thr: float) -> List[_Cluster]:
    if not 0.0 < iou_thr < 1.0:
        raise InvalidParameter(f"iou_thr must be in (0, 1), got {iou_thr}")

    ordered = sorted(boxes, key=lambda box: (-box.confidence, *box.corners))
    clusters: List[_Cluster] = []
    for box in ordered:
        for cluster in clusters:
            if corners_iou(cluster.corners, box.corners) >= iou_thr:
                cluster.add(box)
                break
        else:
            clusters.append(_Cluster(box))

    # A fused box may drift onto a later cluster; such pairs are merged.
    clusters.sort(key=lambda cluster: cluster.sort_key)
    pair = _first_overlap(clusters, iou_thr)
    while pair is not None:
        i, j = pair
        clusters[i].absorb(clusters.pop(j))
        clusters.sort(key=lambda cluster: cluster.sort_key)
        pair = _first_overlap(clusters, iou_thr)

    return clusters


def fuse_detections(per_model: Sequence[Sequence[Detection]], iou_thr: float = 0.55) -> List[Detection]:
    """Fuse the detections several models made on one image.

    Raises:
      InvalidParameter: If there are no models or iou_thr isn't in (0, 1).
    """
    if not per_model:
        raise InvalidParameter("fusion needs at least one model")

    boxes = [
        _Box(det.ann.corners, det.confidence, model, det.ann.class_id)
        for model, dets in enumerate(per_model)
        for det in dets
    ]
    fused = []
    for cluster in _cluster(boxes, iou_thr):
        x0, y0, x1, y1 = cluster.corners
        ann = Annotation.from_corners(x0, y0, x1, y1, class_id=cluster.best.class_id)
        fused.append(Detection(ann, min(cluster.confidence, 1.0)))
    return fused


class WorldTransform(NamedTuple):
    """An affine map from image pixels to a planar world frame::

      world_x = a * px + b * py + c
      world_y = d * px + e * py + f
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @classmethod
    def identity(cls) -> "WorldTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def validate(self) -> "WorldTransform":
        if abs(self.determinant) < 1e-12:
            raise SingularTransform(f"transform {tuple(self)} is not invertible")
        return self

    def apply(self, px: float, py: float) -> Tuple[float, float]:
        return self.a * px + self.b * py + self.c, self.d * px + self.e * py + self.f

    def box_to_world(self, corners: Corners) -> Corners:
        """Map a pixel box to the axis-aligned world box around its
        four mapped corners.
        """
        x0, y0, x1, y1 = corners
        points = [self.apply(x, y) for x, y in ((x0, y0), (x1, y0), (x0, y1), (x1, y1))]
        xs, ys = [p[0] for p in points], [p[1] for p in points]
        return min(xs), min(ys), max(xs), max(ys)


class GeoImage(NamedTuple):
    """An image's detections together with its georegistration.
    """

    stem: str
    transform: WorldTransform
    size: Dims
    detections: Sequence[Detection]


class WorldDetection(NamedTuple):
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float
    sources: Tuple[str, ...]

    @property
    def corners(self) -> Corners:
        return self.x0, self.y0, self.x1, self.y1


def dedup_georegistered(per_image: Iterable[GeoImage], world_iou_thr: float = 0.55) -> List[WorldDetection]:
    """Fuse detections across images that overlap on the ground.

    Every box is mapped into the world frame and the pooled set is
    fused with each image acting as one source.  The result keeps the
    stems of the images that contributed to each fused detection.

    Raises:
      SingularTransform: If a transform cannot be inverted.
    """
    boxes = []
    for image in per_image:
        image.transform.validate()
        for det in image.detections:
            world = image.transform.box_to_world(det.ann.pixel_corners(image.size))
            boxes.append(_Box(world, det.confidence, image.stem, det.ann.class_id))

    LOGGER.debug("Deduplicating %d world-frame detections.", len(boxes))
    return [
        WorldDetection(*cluster.corners, min(cluster.confidence, 1.0), tuple(str(s) for s in cluster.sources))
        for cluster in _cluster(boxes, world_iou_thr)
    ]


def read_world_transform(path: PathLike) -> WorldTransform:
    """Read a ``.affine`` sidecar holding six coefficients ``a b c d e f``.

    Raises:
      ParseError: If the file doesn't hold exactly six numbers.
      SingularTransform: If the transform cannot be inverted.
    """
    with open(path, encoding="utf-8") as f:
        fields = f.read().split()

    try:
        if len(fields) != 6:
            raise ValueError
        coefficients = [float(field) for field in fields]
    except ValueError:
        raise ParseError("expected six affine coefficients 'a b c d e f'", str(path), 1)

    return WorldTransform(*coefficients).validate()


def format_world_detection(det: WorldDetection) -> str:
    return (f"{det.x0:.6f} {det.y0:.6f} {det.x1:.6f} {det.y1:.6f} "
            f"{det.confidence:.6f} {','.join(det.sources)}\n")

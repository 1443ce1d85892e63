# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

"""Detection metrics: IoU, matching, precision, recall and AP at an
IoU of 0.5, plus the report tables.

A detection counts as a true positive when its IoU with a not yet
matched ground-truth box is at least the IoU threshold.  AP is the
all-point interpolated area under the precision envelope, pooled over
every image of a dataset.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .annotate import Annotation, corners_iou, iou_against
from .detect import Detection
from .errors import InvalidParameter, StemMismatch
from .files import atomic_write

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

#: The splits a report can describe, in table order.
SPLITS = ("train", "val", "test")

#: The header of the machine-readable report.
CSV_HEADER = ("model", "precision", "recall", "ap50", "n_images", "n_gt", "n_det")

#: The hypotheses tested by the experiment, as (name, model) pairs
#: each compared against the bomb-only model.
HYPOTHESES = (("H1", "moon"), ("H2", "synthetic"), ("H3", "combined"))

#: A (confidence, matched) pair.
Flag = Tuple[float, bool]


class PRPoint(NamedTuple):
    recall: float
    precision: float
    threshold: float


class EvalReport(NamedTuple):
    """One column of the performance table.

    ``vacuous`` is set when there was no ground truth and no detection,
    in which case AP is 1 by convention.
    """

    model_name: str
    precision: float
    recall: float
    ap50: float
    n_images: int
    n_gt: int
    n_det: int
    split: str = "test"
    vacuous: bool = False


def iou(a: Annotation, b: Annotation) -> float:
    return corners_iou(a.corners, b.corners)


def match_detections(
        gt: Sequence[Annotation],
        dets: Sequence[Detection],
        iou_thr: float = 0.5,
) -> List[Tuple[int, bool]]:
    """Greedily match detections to ground truth, one to one.

    Detections are visited by descending confidence (ties broken by
    box), and each takes the highest-IoU unmatched ground-truth box
    whose IoU is at least ``iou_thr``.

    Returns:
      ``(index into dets, matched)`` pairs in visiting order.
    """
    order = sorted(range(len(dets)), key=lambda i: dets[i].rank_key)
    gt_boxes = np.array([ann.corners for ann in gt], dtype=np.float64).reshape(-1, 4)
    taken = np.zeros(len(gt), dtype=bool)
    flags = []
    for i in order:
        overlaps = iou_against(dets[i].ann.corners, gt_boxes)
        overlaps[taken] = -1.0
        best = int(np.argmax(overlaps)) if len(gt) else -1
        if best >= 0 and overlaps[best] >= iou_thr:
            taken[best] = True
            flags.append((i, True))
        else:
            flags.append((i, False))
    return flags


def _rank(flags: Iterable[Flag]) -> List[Flag]:
    # Stable, so equal confidences keep their input order.
    return sorted(flags, key=lambda flag: -flag[0])


def pr_curve(flags: Iterable[Flag], n_gt: int) -> List[PRPoint]:
    """Returns the cumulative precision and recall after every
    detection, in descending confidence order.
    """
    ranked = _rank(flags)
    if not ranked:
        return []

    matched = np.array([flag[1] for flag in ranked], dtype=np.int64)
    tp = np.cumsum(matched)
    fp = np.cumsum(1 - matched)
    recall = tp / n_gt if n_gt > 0 else np.zeros(len(ranked))
    precision = tp / (tp + fp)
    return [PRPoint(float(r), float(p), float(c)) for r, p, (c, _) in zip(recall, precision, ranked)]


def average_precision(flags_by_confidence: Iterable[Flag], n_gt: int) -> float:
    """All-point interpolated average precision.

    With no ground truth, AP is 0 if there is any detection and 1
    (vacuously) otherwise.
    """
    if n_gt < 0:
        raise InvalidParameter(f"n_gt must be >= 0, got {n_gt}")

    points = pr_curve(flags_by_confidence, n_gt)
    if n_gt == 0:
        return 0.0 if points else 1.0

    if not points:
        return 0.0

    recall = np.array([0.0] + [point.recall for point in points])
    precision = np.array([point.precision for point in points])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * envelope))


def operating_point(points: Sequence[PRPoint]) -> Optional[PRPoint]:
    """Returns the PR point with the highest F1, preferring the higher
    confidence threshold on ties.
    """
    best, best_f1 = None, -1.0
    for point in points:
        total = point.precision + point.recall
        f1 = 2 * point.precision * point.recall / total if total > 0 else 0.0
        if f1 > best_f1:
            best, best_f1 = point, f1
    return best


def evaluate_dataset(
        gt_labels: Mapping[str, Sequence[Annotation]],
        det_files: Mapping[str, Sequence[Detection]],
        iou_thr: float = 0.5,
        conf_thr: float = 0.25,
        model_name: str = "model",
        split: str = "test",
        point: str = "fixed",
) -> EvalReport:
    """Evaluate a dataset's detections against its ground truth.

    AP is computed over the detections of every image ranked together.
    Precision and recall are taken at ``conf_thr`` when ``point`` is
    ``"fixed"``, or at the maximum-F1 point of the pooled PR curve when
    it is ``"max_f1"``.  Images without detections count as having none.

    Raises:
      StemMismatch: If detections exist for an image without ground truth.
    """
    unknown = sorted(set(det_files) - set(gt_labels))
    if unknown:
        raise StemMismatch(f"detections for unknown images: {', '.join(unknown)}")

    if point not in ("fixed", "max_f1"):
        raise InvalidParameter(f"unknown operating point {point!r}")

    flags: List[Flag] = []
    n_gt = n_det = 0
    for stem in sorted(gt_labels):
        gt, dets = gt_labels[stem], det_files.get(stem, ())
        n_gt += len(gt)
        n_det += len(dets)
        flags.extend((dets[i].confidence, matched) for i, matched in match_detections(gt, dets, iou_thr))

    ap50 = average_precision(flags, n_gt)
    if point == "max_f1":
        best = operating_point(pr_curve(flags, n_gt))
        precision, recall = (best.precision, best.recall) if best else (0.0, 0.0)
    else:
        tp = sum(1 for confidence, matched in flags if matched and confidence >= conf_thr)
        kept = sum(1 for confidence, _ in flags if confidence >= conf_thr)
        precision = tp / kept if kept else 0.0
        recall = tp / n_gt if n_gt else 0.0

    vacuous = n_gt == 0 and n_det == 0
    if vacuous:
        LOGGER.warning("Model %r has no ground truth and no detections on %s; AP is vacuous.", model_name, split)

    return EvalReport(model_name, precision, recall, ap50, len(gt_labels), n_gt, n_det, split, vacuous)


def _column_names(reports: Sequence[EvalReport]) -> List[str]:
    names: List[str] = []
    for report in reports:
        if report.model_name not in names:
            names.append(report.model_name)
    return names


def render_report(reports: Sequence[EvalReport]) -> str:
    """Render reports as a text table with one column per model.

    There is an ``mAP_<split>`` row for every split present, followed
    by ``precision`` and ``recall`` rows for the test split (or for
    every split when there is no test report).  Values have three
    decimals; missing ones are shown as ``-``.
    """
    if not reports:
        raise InvalidParameter("there is nothing to render")

    names = _column_names(reports)
    cells: Dict[Tuple[str, str], EvalReport] = {(r.model_name, r.split): r for r in reports}
    splits = [split for split in SPLITS if any(r.split == split for r in reports)]
    splits += sorted({r.split for r in reports} - set(SPLITS))
    detail = ["test"] if "test" in splits else splits

    rows: List[Tuple[str, List[str]]] = []
    for split in splits:
        rows.append((f"mAP_{split}", [_cell(cells.get((name, split)), "ap50") for name in names]))
    for metric in ("precision", "recall"):
        for split in detail:
            rows.append((f"{metric}_{split}", [_cell(cells.get((name, split)), metric) for name in names]))

    label_width = max(len("metric"), *(len(label) for label, _ in rows))
    widths = [max(len(name), 5) for name in names]
    lines = ["  ".join(["metric".ljust(label_width)] + [name.rjust(w) for name, w in zip(names, widths)])]
    for label, values in rows:
        lines.append("  ".join([label.ljust(label_width)] + [value.rjust(w) for value, w in zip(values, widths)]))
    return "\n".join(lines) + "\n"


def _cell(report: Optional[EvalReport], metric: str) -> str:
    if report is None:
        return "-"
    return f"{getattr(report, metric):.3f}"


def write_report_csv(reports: Iterable[EvalReport], path: PathLike) -> None:
    """Write reports as comma-separated values.  Reports for splits
    other than test are named ``<model>:<split>``.
    """
    with atomic_write(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in reports:
            name = report.model_name if report.split == "test" else f"{report.model_name}:{report.split}"
            writer.writerow([
                name,
                f"{report.precision:.6f}",
                f"{report.recall:.6f}",
                f"{report.ap50:.6f}",
                report.n_images,
                report.n_gt,
                report.n_det,
            ])


def hypothesis_summary(reports: Iterable[EvalReport], split: str = "test") -> List[str]:
    """Compare the AP of the moon, synthetic and combined models
    against the bomb-only model, one line per hypothesis.
    """
    ap = {report.model_name: report.ap50 for report in reports if report.split == split}
    lines = []
    for hypothesis, model in HYPOTHESES:
        if model not in ap or "bomb" not in ap:
            lines.append(f"{hypothesis} {model} vs bomb: n/a")
            continue

        delta = ap[model] - ap["bomb"]
        lines.append(f"{hypothesis} {model} vs bomb: mAP_{split} {ap[model]:.3f} vs {ap['bomb']:.3f} ({delta:+.3f})")
    return lines

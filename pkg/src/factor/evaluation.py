"""AP50 / mAP50 detection evaluation.

Per category, detections are ranked by score, greedily matched to unmatched
ground truth at IoU >= 0.5, and the precision-recall curve is integrated
with all-points interpolation (area under the monotone precision envelope).
Boxes flagged difficult can absorb matches but count neither as true
positives nor toward the recall denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interchange import (
    GROUNDTRUTH_SCHEMA,
    BoundingBox,
    DetectionSet,
    InvariantViolationError,
    MalformedDocumentError,
    _emit,
    _parse_document,
    _require,
)
from .pairing import iou

MATCH_IOU = 0.5


@dataclass(frozen=True)
class GroundTruthSet:
    image_id: str
    boxes: tuple[tuple[BoundingBox, int], ...]  # (box, category index)
    difficult_flags: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "difficult_flags", tuple(self.difficult_flags))
        if len(self.boxes) != len(self.difficult_flags):
            raise InvariantViolationError(
                "difficult_flags: length does not match boxes"
            )


@dataclass(frozen=True)
class CategoryCounts:
    true_positives: int
    false_positives: int
    ground_truth_total: int


@dataclass(frozen=True)
class EvalReport:
    per_category_ap50: tuple[float, ...]
    map50: float
    counts: tuple[CategoryCounts, ...]


def _average_precision(tp_flags: list[bool], n_positive: int) -> float:
    """Area under the interpolated PR curve; tp_flags in rank order."""
    if n_positive == 0 or not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_positive
    precision = tp / (tp + fp)
    # monotone envelope, then sum rectangle areas at recall steps
    mrec = np.concatenate(([0.0], recall, [recall[-1]]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for k in range(mpre.size - 2, -1, -1):
        mpre[k] = max(mpre[k], mpre[k + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _category_matches(
    detections: list[DetectionSet], truth: list[GroundTruthSet], c: int
) -> tuple[list[bool], int]:
    """Rank-ordered TP flags and the positive count for one category."""
    # (score, image_id, input order) for deterministic ranking
    ranked = []
    for d in detections:
        for order, r in enumerate(d.regions):
            if r.label == c:
                ranked.append((-r.score, d.image_id, order, r))
    ranked.sort(key=lambda item: (item[0], item[1], item[2]))

    n_positive = 0
    gt_index: dict[str, list[tuple[BoundingBox, bool]]] = {}
    for t in truth:
        entries = [
            (box, difficult)
            for (box, cat), difficult in zip(t.boxes, t.difficult_flags)
            if cat == c
        ]
        gt_index[t.image_id] = entries
        n_positive += sum(1 for _, difficult in entries if not difficult)

    matched: dict[str, set[int]] = {t.image_id: set() for t in truth}
    tp_flags = []
    for _, image_id, _, region in ranked:
        best_iou, best_k = 0.0, -1
        for k, (gt_box, _) in enumerate(gt_index[image_id]):
            v = iou(region.box, gt_box)
            if v > best_iou:
                best_iou, best_k = v, k
        if best_iou >= MATCH_IOU and best_k not in matched[image_id]:
            matched[image_id].add(best_k)
            if gt_index[image_id][best_k][1]:
                continue  # difficult ground truth: ignore the detection
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    return tp_flags, n_positive


def pr_curve(
    detections: list[DetectionSet], truth: list[GroundTruthSet], category: int
) -> tuple[np.ndarray, np.ndarray]:
    """Recall and precision points in rank order, for plotting."""
    tp_flags, n_positive = _category_matches(detections, truth, category)
    if not tp_flags or n_positive == 0:
        return np.zeros(0), np.zeros(0)
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    return tp / n_positive, tp / (tp + fp)


def evaluate(
    detections: list[DetectionSet], truth: list[GroundTruthSet]
) -> EvalReport:
    """Score detections against ground truth, per category and averaged."""
    truth_by_image = {t.image_id: t for t in truth}
    det_ids = {d.image_id for d in detections}
    if det_ids != set(truth_by_image):
        missing = det_ids.symmetric_difference(truth_by_image)
        raise ValueError(f"image_id mismatch between detections and truth: {missing}")

    n_categories = len(detections[0].categories) if detections else 0
    for d in detections:
        if len(d.categories) != n_categories:
            raise ValueError("vocabulary differs across detection sets")

    ap_values = []
    counts = []
    for c in range(n_categories):
        tp_flags, n_positive = _category_matches(detections, truth, c)
        n_tp = sum(tp_flags)
        counts.append(
            CategoryCounts(
                true_positives=n_tp,
                false_positives=len(tp_flags) - n_tp,
                ground_truth_total=n_positive,
            )
        )
        ap_values.append(_average_precision(tp_flags, n_positive))

    populated = [ap for ap, cc in zip(ap_values, counts) if cc.ground_truth_total > 0]
    return EvalReport(
        per_category_ap50=tuple(ap_values),
        map50=float(np.mean(populated)) if populated else 0.0,
        counts=tuple(counts),
    )


def serialize_ground_truth(gt: GroundTruthSet) -> bytes:
    doc = {
        "schema": GROUNDTRUTH_SCHEMA,
        "image_id": gt.image_id,
        "boxes": [
            {
                "box": [b.x1, b.y1, b.x2, b.y2],
                "category": cat,
                "difficult": bool(diff),
            }
            for (b, cat), diff in zip(gt.boxes, gt.difficult_flags)
        ],
    }
    return _emit(doc).encode("utf-8")


def deserialize_ground_truth(raw: bytes | str) -> GroundTruthSet:
    doc = _parse_document(raw, GROUNDTRUTH_SCHEMA)
    boxes = []
    flags = []
    for i, obj in enumerate(_require(doc, "boxes", list)):
        if not isinstance(obj, dict):
            raise MalformedDocumentError(f"boxes[{i}]: not an object")
        coords = _require(obj, "box", list)
        if len(coords) != 4:
            raise MalformedDocumentError(f"boxes[{i}].box: expected 4 coordinates")
        boxes.append(
            (BoundingBox(*[float(v) for v in coords]), int(_require(obj, "category", int)))
        )
        flags.append(bool(obj.get("difficult", False)))
    return GroundTruthSet(
        image_id=_require(doc, "image_id", str),
        boxes=tuple(boxes),
        difficult_flags=tuple(flags),
    )

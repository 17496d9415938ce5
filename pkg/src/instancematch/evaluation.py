"""Average-precision evaluation for labeled proposals, boxes or masks.

AP follows the COCO convention: per instance id and IoU threshold,
predictions are sorted by descending score and greedily matched to the
highest-IoU unmatched ground truth of the same id with IoU >= threshold;
precision-recall is integrated by 101-point interpolation; the per-threshold
value averages over ids that have at least one ground truth, and the
headline AP averages thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DimMismatch, EmptyUnion
from .matching import LabeledProposal, validate_box

IOU_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))
# i/100 exactly, so boundary recalls compare identically everywhere.
RECALL_GRID = np.arange(101) / 100.0


def iou_box(a, b) -> float:
    """Intersection-over-union of two (x_min, y_min, x_max, y_max) boxes."""
    ax0, ay0, ax1, ay1 = validate_box(a)
    bx0, by0, bx1, by1 = validate_box(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(inter / union)


def iou_mask(a, b) -> float:
    """Intersection-over-union of two binary rasters of equal extent."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise DimMismatch(f"mask extents differ: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        raise EmptyUnion("both masks are empty")
    inter = int(np.logical_and(a, b).sum())
    return inter / union


@dataclass(frozen=True)
class GroundTruth:
    """One annotated object: instance id, box, optional mask raster."""

    instance_id: int
    box: tuple[float, float, float, float]
    mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "box", validate_box(self.box))
        object.__setattr__(self, "instance_id", int(self.instance_id))
        if self.mask is not None:
            object.__setattr__(self, "mask", np.asarray(self.mask).astype(bool))


@dataclass(frozen=True)
class GroundTruthSet:
    """Ground-truth annotations grouped by image id."""

    images: Mapping[str, Sequence[GroundTruth]]

    @property
    def image_ids(self) -> list[str]:
        return list(self.images.keys())

    def instance_ids(self) -> list[int]:
        ids = {g.instance_id for objs in self.images.values() for g in objs}
        return sorted(ids)


@dataclass(frozen=True)
class ApResult:
    """AP over IoU thresholds 0.50:0.05:0.95, plus AP50/AP75 and the
    class-averaged interpolated PR curves (one row per threshold)."""

    ap: float
    ap50: float
    ap75: float
    thresholds: tuple = IOU_THRESHOLDS
    curves: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("ap", "ap50", "ap75"):
            v = getattr(self, name)
            if not np.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.ap > self.ap50 + 1e-12:
            raise ValueError("ap cannot exceed ap50")

    def as_dict(self) -> dict:
        return {"ap": self.ap, "ap50": self.ap50, "ap75": self.ap75}


def compute_ap(
    predictions: Mapping[str, Sequence[LabeledProposal]],
    gt: GroundTruthSet,
    mode: str = "box",
) -> ApResult:
    """Score predictions against ground truth; see the module docstring.

    ``predictions`` maps image id to labeled proposals; unlabeled proposals
    (instance_id None) are ignored. Empty predictions yield AP 0.
    """
    if mode not in ("box", "mask"):
        raise ValueError(f"unknown eval mode {mode!r}")
    classes = gt.instance_ids()
    if not classes:
        return ApResult(0.0, 0.0, 0.0, curves=np.zeros((len(IOU_THRESHOLDS), 101)))

    curves = np.zeros((len(IOU_THRESHOLDS), 101))
    per_threshold = np.zeros(len(IOU_THRESHOLDS))
    for t_index, threshold in enumerate(IOU_THRESHOLDS):
        class_aps = []
        for cls in classes:
            precision, recall = _pr_points(predictions, gt, cls, threshold, mode)
            interp = _interpolated_precision(precision, recall)
            class_aps.append(interp.mean())
            curves[t_index] += interp
        curves[t_index] /= len(classes)
        per_threshold[t_index] = float(np.mean(class_aps))

    ap50 = per_threshold[IOU_THRESHOLDS.index(0.50)]
    ap75 = per_threshold[IOU_THRESHOLDS.index(0.75)]
    return ApResult(float(per_threshold.mean()), ap50, ap75, curves=curves)


def _pr_points(predictions, gt, cls, threshold, mode):
    """Precision/recall after each prediction of class ``cls`` in rank order."""
    ranked = []
    for image_id, proposals in predictions.items():
        for p in proposals:
            if p.instance_id == cls:
                ranked.append((image_id, p))
    # Stable sort: equal scores keep insertion order, so ranking is
    # deterministic for callers that feed proposals in a fixed order.
    ranked.sort(key=lambda item: -item[1].score)

    gt_by_image = {
        image_id: [g for g in objs if g.instance_id == cls]
        for image_id, objs in gt.images.items()
    }
    total_gt = sum(len(v) for v in gt_by_image.values())
    if total_gt == 0:
        return np.zeros(0), np.zeros(0)

    matched = {image_id: [False] * len(objs) for image_id, objs in gt_by_image.items()}
    tp = np.zeros(len(ranked))
    for rank, (image_id, pred) in enumerate(ranked):
        candidates = gt_by_image.get(image_id, [])
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(candidates):
            if matched[image_id][j]:
                continue
            iou = _pair_iou(pred, g, mode)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= threshold:
            matched[image_id][best_j] = True
            tp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(ranked) + 1)
    precision = cum_tp / ranks
    recall = cum_tp / total_gt
    return precision, recall


def _pair_iou(pred: LabeledProposal, g: GroundTruth, mode: str) -> float:
    if mode == "box":
        return iou_box(pred.box, g.box)
    if pred.mask is None or g.mask is None:
        raise DimMismatch("mask mode needs masks on both predictions and gt")
    try:
        return iou_mask(pred.mask, g.mask)
    except EmptyUnion:
        return 0.0


def _interpolated_precision(precision: np.ndarray, recall: np.ndarray) -> np.ndarray:
    """Max precision at recall >= r for each of the 101 recall grid points."""
    if precision.size == 0:
        return np.zeros(101)
    # Envelope from the right: best precision achievable at recall >= recall[i].
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    indices = np.searchsorted(recall, RECALL_GRID, side="left")
    out = np.zeros(101)
    valid = indices < recall.size
    out[valid] = envelope[indices[valid]]
    return out

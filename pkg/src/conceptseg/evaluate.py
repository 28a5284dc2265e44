"""Unsupervised segmentation evaluation: matching and mIoU/wIoU/pAcc.

Predicted groups carry no class semantics, so they are first matched to
ground-truth classes, either many-to-one by pixel plurality ("majority")
or one-to-one by the assignment problem ("hungarian"). Metrics are then
computed on the matched confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import IGNORE_LABEL


def confusion(pred: np.ndarray, gt: np.ndarray,
              n_pred: int, n_gt: int) -> np.ndarray:
    """Pixel confusion counts, n_pred x n_gt, ignore pixels excluded."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth dimensions differ")
    valid = gt != IGNORE_LABEL
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    if p.size and int(p.max()) >= n_pred:
        raise ValueError(f"prediction label {int(p.max())} >= {n_pred}")
    if g.size and int(g.max()) >= n_gt:
        raise ValueError(f"ground-truth label {int(g.max())} >= {n_gt}")
    cm = np.bincount(p * n_gt + g, minlength=n_pred * n_gt)
    return cm.reshape(n_pred, n_gt)


@dataclass
class Matching:
    kind: str                      # "majority" or "hungarian"
    mapping: np.ndarray            # length P; class id, or -1 if unmatched
    empty_groups: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.mapping = np.asarray(self.mapping, dtype=np.int64)


def majority_match(cm: np.ndarray) -> Matching:
    """Map every predicted group to the class holding its pixel plurality.

    Ties break to the lowest class id; empty groups map to class 0 and
    are flagged in ``empty_groups``.
    """
    cm = np.asarray(cm)
    if cm.sum() == 0:
        raise ValueError("confusion matrix is empty")
    mapping = np.argmax(cm, axis=1)
    empty = np.flatnonzero(cm.sum(axis=1) == 0)
    mapping[empty] = 0
    return Matching("majority", mapping, empty.tolist())


def hungarian_match(cm: np.ndarray) -> Matching:
    """Injective group -> class map maximizing matched pixels.

    Rectangular matrices are zero-padded to square; group rows assigned
    to padding columns are left unmatched (-1). Among all optimal
    assignments the lexicographically smallest (by mapping vector, with
    "unmatched" ordering last) is returned.
    """
    cm = np.asarray(cm, dtype=np.int64)
    n_pred, n_gt = cm.shape
    n = max(n_pred, n_gt)
    padded = np.zeros((n, n), dtype=np.int64)
    padded[:n_pred, :n_gt] = cm
    best = _assignment_max(padded)

    # lexicographic tightening: for each real row in order, pin the
    # smallest column (real columns first, then "unmatched") that keeps
    # the optimum reachable
    mapping = np.full(n_pred, -1, dtype=np.int64)
    used = np.zeros(n, dtype=bool)
    fixed_value = 0
    for p in range(n_pred):
        candidates = [g for g in range(n_gt) if not used[g]]
        if n > n_gt and not used[n_gt:].all():
            candidates.append(-1)   # unmatched, via a padding column
        for g in candidates:
            col = g if g >= 0 else int(np.flatnonzero(~used[n_gt:])[0] + n_gt)
            gain = int(padded[p, col])
            rest_rows = list(range(p + 1, n))
            rest_cols = [j for j in range(n) if not used[j] and j != col]
            sub = padded[np.ix_(rest_rows, rest_cols)]
            rest = _assignment_max(sub)
            if fixed_value + gain + rest == best:
                mapping[p] = g
                used[col] = True
                fixed_value += gain
                break
    return Matching("hungarian", mapping)


def _assignment_max(matrix: np.ndarray) -> int:
    """Maximum-sum assignment objective for a square (or empty) matrix."""
    if matrix.size == 0:
        return 0
    cost = matrix.max() - matrix
    rows, cols = linear_sum_assignment(cost)
    return int(matrix[rows, cols].sum())


@dataclass
class MetricsReport:
    miou: float
    wiou: float
    pacc: float
    per_class_iou: np.ndarray      # length G; NaN for absent classes
    matching: Matching
    n_pred: int
    n_gt: int
    total_pixels: int

    def to_csv(self) -> str:
        lines = [
            "metric,value",
            f"mIoU,{self.miou:.6f}",
            f"wIoU,{self.wiou:.6f}",
            f"pAcc,{self.pacc:.6f}",
            f"matching,{self.matching.kind}",
            f"predicted_groups,{self.n_pred}",
            f"classes,{self.n_gt}",
        ]
        for g, iou in enumerate(self.per_class_iou):
            value = "undefined" if np.isnan(iou) else f"{iou:.6f}"
            lines.append(f"class_{g}_IoU,{value}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [
            f"matching: {self.matching.kind}  "
            f"(P={self.n_pred} groups, G={self.n_gt} classes, "
            f"{self.total_pixels} pixels)",
            f"mIoU {self.miou:.4f}   wIoU {self.wiou:.4f}   "
            f"pAcc {self.pacc:.4f}",
        ]
        for g, iou in enumerate(self.per_class_iou):
            if not np.isnan(iou):
                lines.append(f"  class {g:3d}: IoU {iou:.4f}")
        return "\n".join(lines) + "\n"


def metrics(cm: np.ndarray, match: Matching) -> MetricsReport:
    """mIoU, wIoU and pAcc of a confusion matrix under a matching.

    Predictions are relabeled through the match and re-aggregated to a
    G x G matrix; unmatched groups contribute to ground-truth mass only.
    mIoU averages classes present in ground truth or prediction; wIoU
    weights each class IoU by its matched-row pixel share.
    """
    cm = np.asarray(cm, dtype=np.int64)
    n_pred, n_gt = cm.shape
    total = int(cm.sum())
    if total == 0:
        raise ValueError("zero evaluated pixels")
    if len(match.mapping) != n_pred:
        raise ValueError("matching does not cover all predicted groups")

    agg = np.zeros((n_gt, n_gt), dtype=np.int64)
    unmatched_mass = np.zeros(n_gt, dtype=np.int64)
    for p in range(n_pred):
        g = int(match.mapping[p])
        if g >= 0:
            agg[g] += cm[p]
        else:
            unmatched_mass += cm[p]

    row = agg.sum(axis=1)                      # predicted mass per class
    col = agg.sum(axis=0) + unmatched_mass     # ground-truth mass per class
    diag = np.diag(agg)
    union = row + col - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, diag / np.maximum(union, 1), np.nan)
    present = union > 0
    miou = float(iou[present].mean()) if present.any() else float("nan")
    weighted = row > 0
    wiou = float(((row[weighted] / total) * iou[weighted]).sum())
    pacc = float(diag.sum() / total)
    per_class = np.where(present, iou, np.nan)
    return MetricsReport(miou=miou, wiou=wiou, pacc=pacc,
                         per_class_iou=per_class, matching=match,
                         n_pred=n_pred, n_gt=n_gt, total_pixels=total)


@dataclass
class MajorityViolation:
    group: int
    assigned_class: int
    majority_class: int
    assigned_fraction: float


def majority_diagnostic(cm: np.ndarray,
                        hungarian: Matching) -> list[MajorityViolation]:
    """Hungarian assignments whose class lacks a strict pixel plurality.

    A group is flagged when some other class ties or exceeds the
    assigned class's pixel count within the group.
    """
    cm = np.asarray(cm, dtype=np.int64)
    report = []
    for p, g in enumerate(hungarian.mapping):
        g = int(g)
        if g < 0 or cm[p].sum() == 0:
            continue
        majority = int(np.argmax(cm[p]))
        others = np.delete(cm[p], g)
        if others.size and int(others.max()) >= int(cm[p, g]):
            report.append(MajorityViolation(
                group=p, assigned_class=g, majority_class=majority,
                assigned_fraction=float(cm[p, g] / cm[p].sum())))
    return report

"""Overlap-aware instance segmentation evaluation.

Predictions and ground truth are compared mask against mask (never through
a flattened label map), so overlapping instances are scored correctly.
Matching at a threshold is greedy by descending IoU, one-to-one; a matched
pair is a true positive, unmatched ground truth a false negative, unmatched
predictions false positives, and AP = TP / (TP + FP + FN).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DSB_FINE_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DSB_COARSE_THRESHOLDS = tuple(round(0.5 + 0.1 * i, 1) for i in range(5))


def _as_masks(obj) -> list[np.ndarray]:
    if hasattr(obj, "masks"):
        masks = obj.masks
    else:
        masks = obj
    return [np.asarray(m, dtype=bool) for m in masks]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks (0 when both empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(a & b) / union)


def iou_matrix(pred, gt) -> np.ndarray:
    """IoU of every (gt, pred) mask pair, shape [num_gt, num_pred]."""
    pred_masks = _as_masks(pred)
    gt_masks = _as_masks(gt)
    out = np.zeros((len(gt_masks), len(pred_masks)), dtype=np.float64)
    for i, g in enumerate(gt_masks):
        for j, p in enumerate(pred_masks):
            out[i, j] = iou(g, p)
    return out


@dataclass(frozen=True)
class ApScore:
    threshold: float
    tp: int
    fp: int
    fn: int

    @property
    def ap(self) -> float:
        denom = self.tp + self.fp + self.fn
        return self.tp / denom if denom else 1.0


def _greedy_matches(ious: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    gi, pj = np.nonzero(ious > threshold)
    vals = ious[gi, pj]
    order = np.lexsort((pj, gi, -vals))
    gt_used = np.zeros(ious.shape[0], dtype=bool)
    pred_used = np.zeros(ious.shape[1], dtype=bool)
    matches = []
    for k in order:
        i, j = int(gi[k]), int(pj[k])
        if not gt_used[i] and not pred_used[j]:
            gt_used[i] = True
            pred_used[j] = True
            matches.append((i, j))
    return matches


def ap_dsb(pred, gt, threshold: float, *, ious: np.ndarray | None = None) -> ApScore:
    """Detection score at one IoU threshold.

    Candidate pairs need IoU strictly above the threshold and are matched
    greedily by descending IoU (ties by gt index, then prediction index).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if ious is None:
        ious = iou_matrix(pred, gt)
    matches = _greedy_matches(ious, threshold)
    tp = len(matches)
    return ApScore(
        threshold=float(threshold),
        tp=tp,
        fp=ious.shape[1] - tp,
        fn=ious.shape[0] - tp,
    )


def av_ap(pred, gt, thresholds=DSB_FINE_THRESHOLDS) -> float:
    """Mean AP over a threshold grid."""
    if not len(thresholds):
        raise ValueError("thresholds must be non-empty")
    ious = iou_matrix(pred, gt)
    return float(
        np.mean([ap_dsb(pred, gt, th, ious=ious).ap for th in thresholds])
    )


@dataclass
class EvalReport:
    """Per-threshold detection scores plus per-instance best IoU."""

    rows: list[ApScore]
    avap: float
    best_iou_per_gt: np.ndarray
    best_iou_per_pred: np.ndarray

    def to_json(self) -> str:
        doc = {
            "rows": [
                {
                    "threshold": r.threshold,
                    "tp": r.tp,
                    "fp": r.fp,
                    "fn": r.fn,
                    "ap": r.ap,
                }
                for r in self.rows
            ],
            "avap": self.avap,
            "best_iou_per_gt": [float(v) for v in self.best_iou_per_gt],
            "best_iou_per_pred": [float(v) for v in self.best_iou_per_pred],
        }
        return json.dumps(doc, indent=2)

    def to_tsv(self) -> str:
        lines = ["threshold\ttp\tfp\tfn\tap"]
        for r in self.rows:
            lines.append(f"{r.threshold:g}\t{r.tp}\t{r.fp}\t{r.fn}\t{r.ap:.6f}")
        lines.append(f"avap\t\t\t\t{self.avap:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(pred, gt, thresholds=DSB_FINE_THRESHOLDS) -> EvalReport:
    ious = iou_matrix(pred, gt)
    rows = [ap_dsb(pred, gt, th, ious=ious) for th in thresholds]
    return EvalReport(
        rows=rows,
        avap=float(np.mean([r.ap for r in rows])),
        best_iou_per_gt=ious.max(axis=1) if ious.size else np.zeros(ious.shape[0]),
        best_iou_per_pred=ious.max(axis=0) if ious.size else np.zeros(ious.shape[1]),
    )

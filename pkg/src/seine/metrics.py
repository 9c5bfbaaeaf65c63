"""Low-false-positive-rate ROC metrics with exact tie handling.

Operating points are placed at distinct score values only (tied scores
collapse into a single diagonal ROC step), so every metric is invariant to
input order and to any strictly increasing transform of the scores.

recall_at_fpr picks a real achievable threshold (no interpolation); the
truncated AUROC interpolates linearly at the FPR cut so the area is well
defined, and is normalized by the cut so a perfect ranking scores 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise DataError("scores and labels must be equal-length 1-d arrays")
    if len(scores) < 2:
        raise DataError("need at least 2 scored samples")
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite score")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("single-class split: both classes required")
    return scores, labels, n_pos, n_neg


def roc_curve(scores, labels):
    """(fpr, tpr) points at thresholds = distinct scores, descending; starts (0,0)."""
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each tie group
    last = np.nonzero(np.diff(s) != 0)[0]
    idx = np.concatenate([last, [len(s) - 1]])
    fpr = np.concatenate([[0.0], fp[idx] / n_neg])
    tpr = np.concatenate([[0.0], tp[idx] / n_pos])
    return np.column_stack([fpr, tpr])


def recall_at_fpr(scores, labels, fpr_max=0.01):
    """Max TPR over achievable operating points with FPR <= fpr_max."""
    pts = roc_curve(scores, labels)
    ok = pts[:, 0] <= fpr_max
    return float(pts[ok, 1].max())


def auroc_truncated(scores, labels, fpr_max=0.01, normalization="proportional"):
    """Area under the ROC curve restricted to FPR in [0, fpr_max].

    "proportional" (default) divides the raw area by fpr_max, so a perfect
    classifier scores 1.0 and a random one about fpr_max/2. "mcclish"
    rescales against the best/worst achievable areas onto [0.5, 1].
    """
    if not (0 < fpr_max <= 1):
        raise DataError("fpr_max must be in (0, 1]")
    pts = roc_curve(scores, labels)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        if x0 >= fpr_max:
            break
        if x1 > fpr_max:
            # interpolate tpr at the cut
            y1 = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0)
            x1 = fpr_max
        area += 0.5 * (y0 + y1) * (x1 - x0)
    if normalization == "proportional":
        return float(area / fpr_max)
    if normalization == "mcclish":
        amin = fpr_max * fpr_max / 2.0
        amax = fpr_max
        return float(0.5 * (1.0 + (area - amin) / (amax - amin)))
    raise DataError(f"unknown normalization {normalization!r}")


def auroc_full(scores, labels):
    """Full AUROC = P(score_pos > score_neg) + 0.5 P(tie) over all pairs.

    Accumulated in integer tp/fp counts and divided once at the end, so
    perfect separation gives exactly 1.0.
    """
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.concatenate([[0], np.cumsum(y)])
    fp = np.concatenate([[0], np.cumsum(1 - y)])
    idx = np.concatenate([[0], np.nonzero(np.diff(s) != 0)[0] + 1, [len(s)]])
    tp, fp = tp[idx], fp[idx]
    area = np.sum(np.diff(fp) * 0.5 * (tp[1:] + tp[:-1]))
    return float(area / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricsReport:
    recall_at_fpr1: float
    auroc_trunc_fpr1: float
    auroc_full: float
    n_pos: int
    n_neg: int
    roc_points: list | None = None

    def to_dict(self):
        out = {
            "recall_at_fpr1": self.recall_at_fpr1,
            "auroc_trunc_fpr1": self.auroc_trunc_fpr1,
            "auroc_full": self.auroc_full,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }
        if self.roc_points is not None:
            out["roc_points"] = self.roc_points
        return out


def compute_report(scores, labels, fpr_max=0.01, include_roc=False) -> MetricsReport:
    scores, labels, n_pos, n_neg = _validate(scores, labels)
    pts = roc_curve(scores, labels) if include_roc else None
    return MetricsReport(
        recall_at_fpr1=recall_at_fpr(scores, labels, fpr_max),
        auroc_trunc_fpr1=auroc_truncated(scores, labels, fpr_max),
        auroc_full=auroc_full(scores, labels),
        n_pos=n_pos,
        n_neg=n_neg,
        roc_points=pts.tolist() if include_roc else None,
    )

"""Watermark-recovery and geometric-fidelity metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, EmptyScoreSet, LengthMismatch

PSNR_PEAK = 2.0
PSNR_CAP = 99.0


@dataclass(frozen=True)
class MetricSample:
    accuracy: float
    ber: float
    iou: float
    chamfer: float
    psnr: float

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(w, w_hat) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(w).reshape(-1).astype(bool)
    b = np.asarray(w_hat).reshape(-1).astype(bool)
    if a.shape != b.shape:
        raise LengthMismatch(f"watermark lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise LengthMismatch("empty watermark")
    return a, b


def bit_accuracy(w, w_hat) -> float:
    a, b = _pair(w, w_hat)
    return int((a == b).sum()) / a.size


def ber(w, w_hat) -> float:
    return 1.0 - bit_accuracy(w, w_hat)


def iou_bits(w, w_hat) -> float:
    """Jaccard overlap of the 1-bit positions; 1.0 when both are all-zero."""
    a, b = _pair(w, w_hat)
    union = int((a | b).sum())
    return 1.0 if union == 0 else int((a & b).sum()) / union


def _nonempty(*clouds) -> list[np.ndarray]:
    out = []
    for c in clouds:
        arr = np.asarray(c, dtype=np.float64).reshape(-1, 3)
        if len(arr) == 0:
            raise EmptyCloud("metric needs non-empty clouds")
        out.append(arr)
    return out


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: sum of the two mean nearest-neighbour distances."""
    a, b = _nonempty(a, b)
    d_ab = cKDTree(b).query(a)[0].mean()
    d_ba = cKDTree(a).query(b)[0].mean()
    # Add in a fixed order of the sorted pair so chamfer(a, b) == chamfer(b, a).
    lo, hi = sorted((float(d_ab), float(d_ba)))
    return lo + hi


def psnr(original, attacked, peak: float = PSNR_PEAK) -> float:
    """PSNR in dB over index-wise pairs (nearest neighbours if counts differ)."""
    ref, att = _nonempty(original, attacked)
    if len(ref) == len(att):
        mse = float(((ref - att) ** 2).sum(axis=1).mean())
    else:
        dist = cKDTree(ref).query(att)[0]
        mse = float((dist * dist).mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def roc_auc(positive_scores, negative_scores) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg).

    Counts are kept as integers (twice the U statistic). The larger of the two
    complementary AUCs is rounded once and the smaller is derived from it by an
    exact subtraction, so swapping the arguments gives exactly ``1 - auc``.
    """
    pos = np.asarray(positive_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(negative_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise EmptyScoreSet("AUC needs at least one positive and one negative score")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    upto = np.searchsorted(neg_sorted, pos, side="right")
    u2_pos = int((below + upto).sum())  # 2 * (wins + ties / 2)
    total = 2 * pos.size * neg.size
    u2_neg = total - u2_pos
    larger = 1.0 - min(u2_pos, u2_neg) / total  # in [0.5, 1], so 1 - larger is exact
    return larger if u2_pos > u2_neg else 1.0 - larger


def roc_curve(positive_scores, negative_scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC points ``(thresholds, tpr, fpr)`` for the rule ``score >= threshold``.

    The first point is at threshold +inf (nothing accepted).
    """
    pos = np.asarray(positive_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(negative_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise EmptyScoreSet("ROC needs at least one positive and one negative score")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tpr = (pos[None, :] >= thresholds[:, None]).mean(axis=1)
    fpr = (neg[None, :] >= thresholds[:, None]).mean(axis=1)
    return (np.concatenate([[np.inf], thresholds]),
            np.concatenate([[0.0], tpr]), np.concatenate([[0.0], fpr]))


def sample_metrics(w, w_hat, reference_cloud, attacked_cloud) -> MetricSample:
    acc = bit_accuracy(w, w_hat)
    return MetricSample(
        accuracy=acc,
        ber=1.0 - acc,
        iou=iou_bits(w, w_hat),
        chamfer=chamfer(reference_cloud, attacked_cloud),
        psnr=psnr(reference_cloud, attacked_cloud),
    )

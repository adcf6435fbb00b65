"""Detection metrics: threshold-swept F1 and rank-based ROC-AUC.

F1 is maximized over every midpoint between adjacent distinct scores plus
the all-positive threshold; a prediction is positive when score >= theta.
AUC uses the rank-sum formulation with midrank tie handling, which equals
the trapezoidal area under the ROC curve.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError


def _check_binary(labels: np.ndarray) -> None:
    pos = int(labels.sum())
    if pos == 0 or pos == labels.size:
        raise MetricError(
            f"need both classes, got {pos} positives out of {labels.size}"
        )


def f1_best_threshold(scores, labels) -> tuple[float, float]:
    """Best achievable F1 and the lowest threshold achieving it."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {labels.shape}")
    _check_binary(labels)

    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    total_pos = int(l_sorted.sum())

    # cumulative positives strictly below each sorted position
    pos_below = np.concatenate([[0], np.cumsum(l_sorted)])
    distinct_start = np.flatnonzero(np.diff(s_sorted, prepend=np.nan) != 0)
    # candidate k = number of samples predicted negative (scores < theta);
    # k = 0 is the all-positive prediction, then one k per distinct boundary
    ks = np.concatenate([[0], distinct_start[1:]])
    thetas = np.concatenate([
        [s_sorted[0]],
        (s_sorted[distinct_start[1:] - 1] + s_sorted[distinct_start[1:]]) / 2.0,
    ])
    tp = total_pos - pos_below[ks]
    fp = (len(scores) - ks) - tp
    fn = pos_below[ks]
    f1 = 2.0 * tp / (2.0 * tp + fp + fn)
    best = int(np.argmax(f1))  # first max = lowest theta
    return float(f1[best]), float(thetas[best])


def auroc(scores, labels) -> float:
    """Area under the ROC curve via rank sums with tie correction."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {labels.shape}")
    _check_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pixel_metrics(maps, masks) -> dict:
    """Pool every pixel of a task's test set into one score/label vector."""
    if len(maps) != len(masks):
        raise ValueError(f"{len(maps)} maps vs {len(masks)} masks")
    scores, labels = [], []
    for amap, mask in zip(maps, masks):
        grid = amap.scores if hasattr(amap, "scores") else np.asarray(amap)
        mask = np.asarray(mask)
        if grid.shape != mask.shape:
            raise ValueError(f"resolution mismatch: map {grid.shape} vs mask {mask.shape}")
        scores.append(grid.ravel())
        labels.append(mask.ravel())
    pooled_scores = np.concatenate(scores)
    pooled_labels = np.concatenate(labels).astype(np.int64)
    f1, _ = f1_best_threshold(pooled_scores, pooled_labels)
    return {"pixel_f1": f1, "pixel_auroc": auroc(pooled_scores, pooled_labels)}


def image_metrics(scores, labels) -> dict:
    f1, _ = f1_best_threshold(scores, labels)
    return {"image_f1": f1, "image_auroc": auroc(scores, labels)}

"""Greedy k-center coreset selection (farthest-first traversal).

The selection order is load-bearing: every length-k prefix of the returned
index list is itself the greedy k-center solution for that k, so shrinking
a coreset is a pure truncation.  Determinism is pinned down hard: the seed
point is caller-supplied, squared distances accumulate in float64, and ties
go to the lowest source index.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np


@dataclass
class OrderedCoreset:
    indices: np.ndarray      # int64, greedy insertion order
    radii: np.ndarray        # float32, radii[k-1] = covering radius after k centers
    source_size: int
    seed_index: int

    def __len__(self) -> int:
        return len(self.indices)

    def truncate(self, k_new: int) -> "OrderedCoreset":
        return truncate(self, k_new)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"points must be (n, d), got shape {pts.shape}")
    return pts


def _sqdist_to(pts: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = pts - center
    return np.einsum("ij,ij->i", diff, diff)


def farthest_first(points, k: int, seed_index: int) -> OrderedCoreset:
    """Select k centers by always taking the point farthest from the chosen set.

    Cost is O(n*k) distance evaluations.  radii[j] is the exact covering
    radius of the first j+1 centers over the full input.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("empty point set")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index={seed_index} out of range for {n} points")

    indices = np.empty(k, dtype=np.int64)
    radii = np.empty(k, dtype=np.float32)
    indices[0] = seed_index
    min_sqdist = _sqdist_to(pts, pts[seed_index])
    radii[0] = np.sqrt(min_sqdist.max())
    for j in range(1, k):
        nxt = int(np.argmax(min_sqdist))  # argmax returns the lowest index on ties
        indices[j] = nxt
        np.minimum(min_sqdist, _sqdist_to(pts, pts[nxt]), out=min_sqdist)
        radii[j] = np.sqrt(min_sqdist.max())
    return OrderedCoreset(indices, radii, source_size=n, seed_index=seed_index)


def truncate(coreset: OrderedCoreset, k_new: int) -> OrderedCoreset:
    """First k_new centers; identical to rerunning the greedy at k_new."""
    if not 1 <= k_new <= len(coreset.indices):
        raise ValueError(f"k_new={k_new} out of range for coreset of {len(coreset.indices)}")
    return OrderedCoreset(
        indices=coreset.indices[:k_new].copy(),
        radii=coreset.radii[:k_new].copy(),
        source_size=coreset.source_size,
        seed_index=coreset.seed_index,
    )


def covering_radius(points, center_indices) -> float:
    """Max over points of the distance to the nearest listed center."""
    pts = _as_points(points)
    centers = pts[np.asarray(center_indices, dtype=np.int64)]
    best = np.full(pts.shape[0], np.inf)
    for c in centers:
        np.minimum(best, _sqdist_to(pts, c), out=best)
    return float(np.sqrt(best.max()))


def kcenter_bruteforce(points, k: int) -> tuple[float, tuple[int, ...]]:
    """Exact optimum by enumerating all C(n, k) subsets; oracle-sized only."""
    pts = _as_points(points)
    n = pts.shape[0]
    if n > 14 or k > 5:
        raise ValueError(f"instance too large for brute force: n={n}, k={k}")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    diff = pts[:, None, :] - pts[None, :, :]
    sqd = np.einsum("ijk,ijk->ij", diff, diff)
    best_radius = np.inf
    best_subset: tuple[int, ...] = ()
    for subset in combinations(range(n), k):
        radius = sqd[:, subset].min(axis=1).max()
        if radius < best_radius:
            best_radius = radius
            best_subset = subset
    return float(np.sqrt(best_radius)), best_subset

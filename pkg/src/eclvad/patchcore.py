"""Single-task memory-bank anomaly detection over patch descriptors.

Pipeline: stack layers are bilinearly resized to the first layer's grid
and channel-concatenated, every position is averaged over its p x p
neighborhood (stride 1, borders use the in-bounds cells only), the pooled
training patches are coreset-subsampled into an ordered bank, and test
patches are scored by their distance to the nearest bank vector.  The
image score is the worst patch distance, reweighted by how typical its
nearest bank vector is among its own b nearest bank neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .coreset import farthest_first
from .errors import FormatError, TruncationError
from .fmap import LayerStack

DEFAULT_POOLING = 3
DEFAULT_NEIGHBORS = 9
DEFAULT_SIGMA = 4.0

BANK_MAGIC = b"BANK"
BANK_VERSION = 1


@dataclass
class PatchGrid:
    h_star: int
    w_star: int
    d: int
    descriptors: np.ndarray  # float32 (h_star * w_star, d), row-major positions
    image_id: str


@dataclass
class MemoryBank:
    vectors: np.ndarray      # float32 (count, d), greedy insertion order
    d: int
    task_name: str
    gonzalez_seed: int = 0

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class AnomalyMap:
    height: int
    width: int
    scores: np.ndarray       # float32 (height, width), >= 0
    image_score: float


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) with half-pixel centers (align_corners=False)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad target size {out_h}x{out_w}")
    c, h, w = grid.shape
    if (h, w) == (out_h, out_w):
        return grid.astype(np.float32, copy=True)

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    g = grid.astype(np.float64)
    top = g[:, y0, :] * (1.0 - fy)[None, :, None] + g[:, y1, :] * fy[None, :, None]
    out = (
        top[:, :, x0] * (1.0 - fx)[None, None, :]
        + top[:, :, x1] * fx[None, None, :]
    )
    return out.astype(np.float32)


def _neighborhood_mean(grid: np.ndarray, p: int) -> np.ndarray:
    """p x p box mean at stride 1; border cells average in-bounds entries."""
    if p == 1:
        return grid.astype(np.float32, copy=True)
    c, h, w = grid.shape
    r = p // 2
    # summed-area tables give each window sum in O(1)
    sat = np.zeros((c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(grid, axis=1), axis=2, out=sat[:, 1:, 1:])
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - r, 0)
    y1 = np.minimum(ys + r + 1, h)
    x0 = np.maximum(xs - r, 0)
    x1 = np.minimum(xs + r + 1, w)
    sums = (
        sat[:, y1[:, None], x1[None, :]]
        - sat[:, y0[:, None], x1[None, :]]
        - sat[:, y1[:, None], x0[None, :]]
        + sat[:, y0[:, None], x0[None, :]]
    )
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    return (sums / counts[None, :, :]).astype(np.float32)


def build_patch_grid(stack: LayerStack, pooling_p: int = DEFAULT_POOLING) -> PatchGrid:
    """Concatenated, neighborhood-pooled descriptors on the first layer's grid."""
    if not stack.layers:
        raise ValueError("stack has no layers")
    if pooling_p < 1 or pooling_p % 2 == 0:
        raise ValueError(f"pooling_p must be odd and >= 1, got {pooling_p}")
    first = stack.layers[0]
    h, w = first.height, first.width
    resized = [bilinear_resize(layer.grid(), h, w) for layer in stack.layers]
    merged = np.concatenate(resized, axis=0)
    pooled = _neighborhood_mean(merged, pooling_p)
    d = pooled.shape[0]
    descriptors = np.ascontiguousarray(pooled.transpose(1, 2, 0).reshape(h * w, d))
    return PatchGrid(h_star=h, w_star=w, d=d, descriptors=descriptors, image_id=stack.image_id)


def pool_patches(grids: list[PatchGrid]) -> np.ndarray:
    """All patch descriptors of all grids, in the given order."""
    if not grids:
        raise ValueError("no grids to pool")
    d = grids[0].d
    for g in grids:
        if g.d != d:
            raise ValueError(f"descriptor dim mismatch: {g.d} != {d}")
    return np.concatenate([g.descriptors for g in grids], axis=0)


def build_bank(train_grids: list[PatchGrid], target_size: int,
               task_name: str = "") -> MemoryBank:
    """Coreset-subsample the pooled training patches into an ordered bank."""
    pool = pool_patches(train_grids)
    if not 1 <= target_size <= len(pool):
        raise ValueError(f"target_size={target_size} out of range for pool of {len(pool)}")
    cs = farthest_first(pool, target_size, seed_index=0)
    return MemoryBank(
        vectors=pool[cs.indices].astype(np.float32),
        d=pool.shape[1],
        task_name=task_name,
        gonzalez_seed=0,
    )


def pairwise_distance(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Exact L2 distances (len(a), len(b)); float64 accumulation."""
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    bb = np.einsum("ij,ij->i", b64, b64)
    out = np.empty((len(a64), len(b64)))
    for start in range(0, len(a64), chunk):
        blk = a64[start:start + chunk]
        sq = np.einsum("ij,ij->i", blk, blk)[:, None] + bb[None, :] - 2.0 * blk @ b64.T
        np.maximum(sq, 0.0, out=sq)
        out[start:start + chunk] = np.sqrt(sq)
    return out


def score_grid(grid: PatchGrid, bank: MemoryBank,
               b_neighbors: int = DEFAULT_NEIGHBORS) -> AnomalyMap:
    """Per-position nearest-bank distances plus the reweighted image score.

    Returns feature-resolution scores; rendering to image resolution is a
    separate step (render_map).
    """
    if grid.d != bank.d:
        raise ValueError(f"descriptor dim {grid.d} != bank dim {bank.d}")
    if not 1 <= b_neighbors <= len(bank.vectors):
        raise ValueError(
            f"b_neighbors={b_neighbors} out of range for bank of {len(bank.vectors)}"
        )
    dist = pairwise_distance(grid.descriptors, bank.vectors)
    per_position = dist.min(axis=1)
    worst_pos = int(np.argmax(per_position))
    nearest_idx = int(np.argmin(dist[worst_pos]))
    raw_score = float(dist[worst_pos, nearest_idx])

    # neighborhood of the matched bank vector, inside the bank, including itself
    to_nearest = pairwise_distance(bank.vectors[nearest_idx:nearest_idx + 1], bank.vectors)[0]
    hood = np.argsort(to_nearest, kind="stable")[:b_neighbors]
    # softmax-style stabilization: exp of large raw distances would overflow
    hood_dist = dist[worst_pos, hood]
    peak = max(raw_score, float(hood_dist.max()))
    denom = np.exp(hood_dist - peak).sum()
    factor = 1.0 - np.exp(raw_score - peak) / denom
    image_score = float(factor * raw_score)

    scores = per_position.reshape(grid.h_star, grid.w_star).astype(np.float32)
    return AnomalyMap(grid.h_star, grid.w_star, scores, image_score)


def render_map(feature_scores: np.ndarray, image_size: tuple[int, int],
               sigma: float = DEFAULT_SIGMA, image_score: float | None = None) -> AnomalyMap:
    """Bilinear upsample to image size, then Gaussian smoothing.

    Kernel radius is ceil(4*sigma) with reflect padding, so a normalized
    kernel preserves total mass.  When image_score is not given it defaults
    to the max of the rendered map (the distribution-method convention).
    """
    h, w = int(image_size[0]), int(image_size[1])
    if h < 1 or w < 1:
        raise ValueError(f"bad image size {image_size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    up = bilinear_resize(feature_scores.astype(np.float32)[None, :, :], h, w)[0]
    radius = int(np.ceil(4.0 * sigma))
    smooth = gaussian_filter(up.astype(np.float64), sigma=sigma,
                             mode="reflect", radius=radius)
    smooth = np.maximum(smooth, 0.0).astype(np.float32)
    if image_score is None:
        image_score = float(smooth.max())
    return AnomalyMap(h, w, smooth, float(image_score))


def write_bank(bank: MemoryBank, sink) -> None:
    sink.write(BANK_MAGIC)
    sink.write(BANK_VERSION.to_bytes(2, "little"))
    sink.write(int(bank.d).to_bytes(4, "little"))
    sink.write(len(bank.vectors).to_bytes(4, "little"))
    name = bank.task_name.encode("utf-8")
    sink.write(len(name).to_bytes(2, "little"))
    sink.write(name)
    sink.write(int(bank.gonzalez_seed).to_bytes(4, "little"))
    sink.write(np.ascontiguousarray(bank.vectors, dtype="<f4").tobytes())


def read_bank(source) -> MemoryBank:
    def need(n, what):
        buf = source.read(n)
        if len(buf) != n:
            raise TruncationError(what, n, len(buf))
        return buf

    magic = need(4, "magic")
    if magic != BANK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {BANK_MAGIC!r}")
    version = int.from_bytes(need(2, "version"), "little")
    if version != BANK_VERSION:
        raise FormatError(f"unsupported BANK version {version}")
    d = int.from_bytes(need(4, "dim"), "little")
    count = int.from_bytes(need(4, "count"), "little")
    name = need(int.from_bytes(need(2, "task name length"), "little"), "task name")
    seed = int.from_bytes(need(4, "seed"), "little")
    raw = need(4 * count * d, "vectors")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(count, d).copy()
    return MemoryBank(vectors=vectors, d=d, task_name=name.decode("utf-8"),
                      gonzalez_seed=seed)

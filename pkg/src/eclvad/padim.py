"""Per-position Gaussian modeling with Mahalanobis scoring.

Full mode keeps a d x d covariance per grid position (unbiased estimate
plus an epsilon ridge) and scores sqrt of the quadratic form through a
cached Cholesky factor; diag mode keeps per-dimension variances and scores
the normalized sum of squared residuals with no square root.  The sqrt
asymmetry is intentional: threshold-sweep metrics are monotone-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, TruncationError
from .patchcore import PatchGrid

EPSILON = 0.01

MODE_FULL = "full"
MODE_DIAG = "diag"

GAUS_MAGIC = b"GAUS"
GAUS_VERSION = 1


@dataclass
class GaussianField:
    grid: tuple[int, int]            # (h_star, w_star)
    d: int
    mode: str                        # "full" | "diag"
    mean: np.ndarray                 # (P, d) float64
    cov: np.ndarray | None = None    # (P, d, d) float64, full mode
    var: np.ndarray | None = None    # (P, d) float64, diag mode
    n_samples: int = 0
    epsilon: float = EPSILON
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def positions(self) -> int:
        return self.grid[0] * self.grid[1]

    def chol(self) -> np.ndarray:
        """Cached SPD factor of cov; recomputed after any cov change."""
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.cov)
            except np.linalg.LinAlgError as exc:
                bad = _first_non_spd(self.cov)
                raise NumericError(
                    f"covariance at position {bad} is not positive definite"
                ) from exc
        return self._chol

    def invalidate(self) -> None:
        self._chol = None

    def storage_bytes(self) -> int:
        """float32 storage cost of the statistics (mean + cov or var)."""
        per_pos = 4 * self.d + (4 * self.d * self.d if self.mode == MODE_FULL else 4 * self.d)
        return self.positions * per_pos


def _first_non_spd(cov: np.ndarray) -> int:
    for i, c in enumerate(cov):
        try:
            np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            return i
    return -1


def _stack_grids(train_grids: list[PatchGrid]) -> np.ndarray:
    if len(train_grids) < 2:
        raise ValueError(f"need >= 2 training grids, got {len(train_grids)}")
    shape = (train_grids[0].h_star, train_grids[0].w_star, train_grids[0].d)
    for g in train_grids:
        if (g.h_star, g.w_star, g.d) != shape:
            raise ValueError(
                f"grid shape mismatch: {(g.h_star, g.w_star, g.d)} != {shape}"
            )
    return np.stack([g.descriptors.astype(np.float64) for g in train_grids])


def fit(train_grids: list[PatchGrid], mode: str = MODE_FULL,
        epsilon: float = EPSILON) -> GaussianField:
    """Per-position sample mean and (co)variance with the epsilon ridge."""
    if mode not in (MODE_FULL, MODE_DIAG):
        raise ValueError(f"unknown mode {mode!r}")
    samples = _stack_grids(train_grids)          # (N, P, d)
    n, p, d = samples.shape
    mean = samples.mean(axis=0)
    centered = samples - mean
    g0 = train_grids[0]
    if mode == MODE_FULL:
        cov = np.einsum("npi,npj->pij", centered, centered) / (n - 1)
        cov += epsilon * np.eye(d)
        return GaussianField((g0.h_star, g0.w_star), d, mode, mean,
                             cov=cov, n_samples=n, epsilon=epsilon)
    var = np.square(centered).sum(axis=0) / (n - 1) + epsilon
    return GaussianField((g0.h_star, g0.w_star), d, mode, mean,
                         var=var, n_samples=n, epsilon=epsilon)


def score(grid: PatchGrid, fld: GaussianField) -> np.ndarray:
    """Per-position anomaly scores on the feature grid."""
    if (grid.h_star, grid.w_star) != fld.grid or grid.d != fld.d:
        raise ValueError(
            f"grid {(grid.h_star, grid.w_star, grid.d)} does not match "
            f"field {(*fld.grid, fld.d)}"
        )
    residual = grid.descriptors.astype(np.float64) - fld.mean
    if fld.mode == MODE_FULL:
        solved = np.linalg.solve(fld.chol(), residual[:, :, None])[:, :, 0]
        quad = np.einsum("pi,pi->p", solved, solved)
        out = np.sqrt(np.maximum(quad, 0.0))
    else:
        out = np.einsum("pi,pi->p", residual / fld.var, residual)
    return out.reshape(fld.grid).astype(np.float32)


def diag_of(fld: GaussianField) -> GaussianField:
    """Diagonal view of a full field, as an independent diag-mode field."""
    if fld.mode != MODE_FULL:
        raise ValueError("diag_of expects a full-mode field")
    var = np.ascontiguousarray(np.diagonal(fld.cov, axis1=1, axis2=2))
    return GaussianField(fld.grid, fld.d, MODE_DIAG, fld.mean.copy(),
                         var=var, n_samples=fld.n_samples, epsilon=fld.epsilon)


def write_field(fld: GaussianField, sink) -> None:
    sink.write(GAUS_MAGIC)
    sink.write(GAUS_VERSION.to_bytes(2, "little"))
    sink.write((0 if fld.mode == MODE_FULL else 1).to_bytes(1, "little"))
    sink.write(int(fld.grid[0]).to_bytes(4, "little"))
    sink.write(int(fld.grid[1]).to_bytes(4, "little"))
    sink.write(int(fld.d).to_bytes(4, "little"))
    sink.write(np.float32(fld.epsilon).tobytes())
    sink.write(int(fld.n_samples).to_bytes(4, "little"))
    sink.write(np.ascontiguousarray(fld.mean, dtype="<f4").tobytes())
    second = fld.cov if fld.mode == MODE_FULL else fld.var
    sink.write(np.ascontiguousarray(second, dtype="<f4").tobytes())


def read_field(source) -> GaussianField:
    def need(n, what):
        buf = source.read(n)
        if len(buf) != n:
            raise TruncationError(what, n, len(buf))
        return buf

    if need(4, "magic") != GAUS_MAGIC:
        raise FormatError("bad GAUS magic")
    if int.from_bytes(need(2, "version"), "little") != GAUS_VERSION:
        raise FormatError("unsupported GAUS version")
    mode = MODE_FULL if need(1, "mode")[0] == 0 else MODE_DIAG
    h = int.from_bytes(need(4, "grid h"), "little")
    w = int.from_bytes(need(4, "grid w"), "little")
    d = int.from_bytes(need(4, "dim"), "little")
    epsilon = float(np.frombuffer(need(4, "epsilon"), dtype="<f4")[0])
    n_samples = int.from_bytes(need(4, "n_samples"), "little")
    p = h * w
    mean = np.frombuffer(need(4 * p * d, "mean"), dtype="<f4").reshape(p, d).astype(np.float64)
    if mode == MODE_FULL:
        cov = np.frombuffer(need(4 * p * d * d, "covariance"), dtype="<f4")
        return GaussianField((h, w), d, mode, mean,
                             cov=cov.reshape(p, d, d).astype(np.float64),
                             n_samples=n_samples, epsilon=epsilon)
    var = np.frombuffer(need(4 * p * d, "variance"), dtype="<f4").reshape(p, d)
    return GaussianField((h, w), d, mode, mean, var=var.astype(np.float64),
                         n_samples=n_samples, epsilon=epsilon)


def save_field(fld: GaussianField, path) -> None:
    with open(path, "wb") as f:
        write_field(fld, f)


def load_field(path) -> GaussianField:
    with open(path, "rb") as f:
        return read_field(f)

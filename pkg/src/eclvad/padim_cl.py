"""Continual Gaussian-field maintenance: fusion and multimodal scoring.

Two fusion rules live here.  ``fuse_legacy`` is the uniform 1/T average of
per-task means and precisions; it is biased whenever task sample counts
differ and is kept only as the reference baseline.  ``fuse_exact`` merges
via mean-shift (parallel-axis) corrections and is exact: the running state
always equals the population-convention statistics of every sample seen so
far, regardless of task order.

Divisor convention: per-task fits use the N-1 estimator, so ``fuse_exact``
first strips the epsilon ridge and rescales each incoming task covariance
to the divide-by-N convention, merges, and re-applies the ridge once.  The
fused state therefore carries population-convention covariances; the
matching joint estimate is the population covariance of the pooled samples
plus the same ridge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .padim import MODE_DIAG, MODE_FULL, GaussianField, load_field, save_field, score
from .patchcore import PatchGrid


@dataclass
class FusedField:
    field: GaussianField
    cumulative_n: int


@dataclass
class FieldList:
    fields: list[GaussianField]
    task_names: list[str]

    def __len__(self) -> int:
        return len(self.fields)


def _check_compatible(a: GaussianField, b: GaussianField) -> None:
    if a.grid != b.grid or a.d != b.d or a.mode != b.mode:
        raise ValueError(
            f"incompatible fields: {(a.grid, a.d, a.mode)} vs {(b.grid, b.d, b.mode)}"
        )


def _strip_ridge(fld: GaussianField) -> np.ndarray:
    """Second moment without the epsilon ridge (cov or var by mode)."""
    if fld.mode == MODE_FULL:
        return fld.cov - fld.epsilon * np.eye(fld.d)
    return fld.var - fld.epsilon


def _with_ridge(fld: GaussianField, second: np.ndarray, mean: np.ndarray,
                n: int) -> GaussianField:
    if fld.mode == MODE_FULL:
        cov = second + fld.epsilon * np.eye(fld.d)
        return GaussianField(fld.grid, fld.d, fld.mode, mean, cov=cov,
                             n_samples=n, epsilon=fld.epsilon)
    return GaussianField(fld.grid, fld.d, fld.mode, mean, var=second + fld.epsilon,
                         n_samples=n, epsilon=fld.epsilon)


def start_exact(fld: GaussianField, n_samples: int | None = None) -> FusedField:
    """Seed the exact-fusion state from a fresh per-task fit.

    Converts the N-1 estimate to the population convention so later merges
    stay closed over that convention.
    """
    n = fld.n_samples if n_samples is None else n_samples
    if n < 2:
        raise ValueError(f"need n_samples >= 2, got {n}")
    second = _strip_ridge(fld) * ((n - 1) / n)
    return FusedField(_with_ridge(fld, second, fld.mean.copy(), n), n)


def start_legacy(fld: GaussianField, n_samples: int | None = None) -> FusedField:
    """Seed the legacy state; statistics are taken exactly as fitted."""
    n = fld.n_samples if n_samples is None else n_samples
    return FusedField(fld, n)


def fuse_exact(state: FusedField, new_field: GaussianField,
               n_new: int | None = None) -> FusedField:
    """Merge a per-task fit into the running state via mean-shift correction."""
    n_new = new_field.n_samples if n_new is None else n_new
    if n_new < 2:
        raise ValueError(f"need n_new >= 2, got {n_new}")
    _check_compatible(state.field, new_field)
    n_old = state.cumulative_n
    n_tot = n_old + n_new
    mu_old = state.field.mean
    mu_new = new_field.mean
    mu = (n_old * mu_old + n_new * mu_new) / n_tot
    second_old = _strip_ridge(state.field)                      # population already
    second_new = _strip_ridge(new_field) * ((n_new - 1) / n_new)
    d_old = mu_old - mu
    d_new = mu_new - mu
    if state.field.mode == MODE_FULL:
        shift_old = np.einsum("pi,pj->pij", d_old, d_old)
        shift_new = np.einsum("pi,pj->pij", d_new, d_new)
    else:
        shift_old = np.square(d_old)
        shift_new = np.square(d_new)
    second = (n_old * (second_old + shift_old) + n_new * (second_new + shift_new)) / n_tot
    return FusedField(_with_ridge(state.field, second, mu, n_tot), n_tot)


def _precision(fld: GaussianField) -> np.ndarray:
    if fld.mode == MODE_FULL:
        return np.linalg.inv(fld.cov)
    return 1.0 / fld.var


def fuse_legacy(state: FusedField, new_field: GaussianField, T: int) -> FusedField:
    """Uniform 1/T averaging of means and precisions (the biased baseline)."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    _check_compatible(state.field, new_field)
    mu = ((T - 1) * state.field.mean + new_field.mean) / T
    prec = ((T - 1) * _precision(state.field) + _precision(new_field)) / T
    n_tot = state.cumulative_n + new_field.n_samples
    if state.field.mode == MODE_FULL:
        fused = GaussianField(state.field.grid, state.field.d, MODE_FULL, mu,
                              cov=np.linalg.inv(prec), n_samples=n_tot,
                              epsilon=state.field.epsilon)
    else:
        fused = GaussianField(state.field.grid, state.field.d, MODE_DIAG, mu,
                              var=1.0 / prec, n_samples=n_tot,
                              epsilon=state.field.epsilon)
    return FusedField(fused, n_tot)


def score_multimodal(grid: PatchGrid, fields: FieldList | list[GaussianField]):
    """Min-over-tasks score per position, plus which task won each position."""
    flds = fields.fields if isinstance(fields, FieldList) else list(fields)
    if not flds:
        raise ValueError("empty field list")
    for f in flds[1:]:
        _check_compatible(flds[0], f)
    stacked = np.stack([score(grid, f) for f in flds])   # (T, h, w)
    best = stacked.min(axis=0)
    winner = stacked.argmin(axis=0)                       # lowest t on ties
    return best.astype(np.float32), winner.astype(np.int64)


def memory_report(T: int, d: int, h_star: int, w_star: int,
                  mode: str, variant: str) -> int:
    """Statistics storage in bytes for a (mode, variant) configuration."""
    if min(T, d, h_star, w_star) < 1:
        raise ValueError("all memory_report parameters must be positive")
    if mode not in (MODE_FULL, MODE_DIAG):
        raise ValueError(f"unknown mode {mode!r}")
    if variant not in ("uni", "multi"):
        raise ValueError(f"unknown variant {variant!r}")
    per_position = 4 * d + 4 * d * d if mode == MODE_FULL else 8 * d
    total = h_star * w_star * per_position
    return T * total if variant == "multi" else total


def save_field_list(fields: FieldList, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, (fld, name) in enumerate(zip(fields.fields, fields.task_names)):
        fname = f"field_{i:03d}.gaus"
        save_field(fld, directory / fname)
        names.append({"task": name, "file": fname})
    index = {"schema_version": 1, "mode": fields.fields[0].mode, "fields": names}
    (directory / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_field_list(directory) -> FieldList:
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"no field-list index under {directory}") from exc
    fields, names = [], []
    for entry in index["fields"]:
        fields.append(load_field(directory / entry["file"]))
        names.append(entry["task"])
    return FieldList(fields, names)

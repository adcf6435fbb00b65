"""Synthetic feature scenarios: the whole suite runs without a backbone.

Each task gets a cluster center in concatenated-feature space; normal
stacks are that center plus unit isotropic noise at every grid position,
anomalous test stacks shift a contiguous square block of positions by a
fixed-norm offset and carry the matching ground-truth mask at image
resolution.  Centers are rejection-sampled so that every layer's slice of
any two centers is at least ``cluster_separation`` apart, which keeps both
patch banks and last-layer prototypes separable.  Output is a pure
function of the spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fmap import LABEL_ANOMALOUS, LABEL_NORMAL, FeatureMap, LayerStack, save_stack
from .manifest import ScenarioManifest, TaskEntry, save_manifest

IMAGE_UPSCALE = 4  # image resolution = feature grid * this factor
MAX_CENTER_TRIES = 10_000


@dataclass
class SynthSpec:
    num_tasks: int
    d_per_layer: list[int] = field(default_factory=lambda: [8])
    grid: tuple[int, int] = (8, 8)
    normals_per_task: int = 8
    anomalies_per_task: int = 2
    cluster_separation: float = 10.0
    anomaly_offset: float = 6.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if not self.d_per_layer or any(d < 1 for d in self.d_per_layer):
            raise ConfigError("d_per_layer entries must be >= 1")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ConfigError("grid dims must be >= 1")
        if self.normals_per_task < 1:
            raise ConfigError("normals_per_task must be >= 1")
        if self.anomalies_per_task < 0:
            raise ConfigError("anomalies_per_task must be >= 0")
        if self.cluster_separation <= 0:
            raise ConfigError("cluster_separation must be > 0")
        if self.anomaly_offset <= 0:
            raise ConfigError("anomaly_offset must be > 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        try:
            spec = cls(
                num_tasks=int(doc["num_tasks"]),
                d_per_layer=[int(d) for d in doc.get("d_per_layer", [8])],
                grid=tuple(int(g) for g in doc.get("grid", (8, 8))),
                normals_per_task=int(doc.get("normals_per_task", 8)),
                anomalies_per_task=int(doc.get("anomalies_per_task", 2)),
                cluster_separation=float(doc.get("cluster_separation", 10.0)),
                anomaly_offset=float(doc.get("anomaly_offset", 6.0)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc
        spec.validate()
        return spec


def _draw_centers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-task centers with per-layer-slice pairwise separation."""
    dims = list(spec.d_per_layer)
    slices = []
    start = 0
    for d in dims:
        slices.append(slice(start, start + d))
        start += d
    total = start
    scale = 2.0 * spec.cluster_separation
    centers = np.empty((spec.num_tasks, total), dtype=np.float64)
    for t in range(spec.num_tasks):
        for attempt in range(MAX_CENTER_TRIES):
            cand = rng.normal(0.0, scale, size=total)
            ok = all(
                np.linalg.norm(centers[:t, s] - cand[s], axis=1).min(initial=np.inf)
                >= spec.cluster_separation
                for s in slices
            )
            if ok:
                centers[t] = cand
                break
        else:
            raise ConfigError(
                f"could not place center {t + 1} with separation "
                f"{spec.cluster_separation} after {MAX_CENTER_TRIES} tries"
            )
    return centers


def _make_stack(image_id, center, spec, rng, anomalous) -> LayerStack:
    gh, gw = spec.grid
    # one feature draw per position over the full concatenated dim
    feats = center[None, None, :] + rng.normal(0.0, 1.0, size=(gh, gw, center.size))
    mask = None
    label = LABEL_NORMAL
    if anomalous:
        side = max(1, min(gh, gw) // 2)
        r0 = int(rng.integers(0, gh - side + 1))
        c0 = int(rng.integers(0, gw - side + 1))
        direction = rng.normal(0.0, 1.0, size=center.size)
        direction *= spec.anomaly_offset / np.linalg.norm(direction)
        feats[r0:r0 + side, c0:c0 + side, :] += direction
        mask = np.zeros((gh * IMAGE_UPSCALE, gw * IMAGE_UPSCALE), dtype=np.uint8)
        mask[r0 * IMAGE_UPSCALE:(r0 + side) * IMAGE_UPSCALE,
             c0 * IMAGE_UPSCALE:(c0 + side) * IMAGE_UPSCALE] = 1
        label = LABEL_ANOMALOUS
    layers = []
    start = 0
    for li, d in enumerate(spec.d_per_layer):
        block = feats[:, :, start:start + d]            # (gh, gw, d)
        start += d
        data = np.ascontiguousarray(
            block.transpose(2, 0, 1), dtype=np.float32    # channel-major
        ).reshape(-1)
        layers.append(
            FeatureMap(
                image_id=image_id, channels=d, height=gh, width=gw,
                data=data, label=label,
                mask=mask if li == 0 else None,
            )
        )
    return LayerStack(image_id, layers)


def generate_synthetic(spec: SynthSpec, out_dir) -> ScenarioManifest:
    """Write the FMAP tree plus manifest.json under out_dir."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    centers = _draw_centers(spec, rng)
    gh, gw = spec.grid
    tasks = []
    for t in range(spec.num_tasks):
        name = f"task{t + 1:02d}"
        task_dir = out_dir / name
        (task_dir / "train").mkdir(parents=True, exist_ok=True)
        (task_dir / "test").mkdir(parents=True, exist_ok=True)
        train_paths, test_paths = [], []
        for i in range(spec.normals_per_task):
            image_id = f"{name}_train_{i:03d}"
            rel = f"{name}/train/{image_id}.fmap"
            save_stack(_make_stack(image_id, centers[t], spec, rng, False), out_dir / rel)
            train_paths.append(rel)
        for i in range(spec.normals_per_task):
            image_id = f"{name}_test_good_{i:03d}"
            rel = f"{name}/test/{image_id}.fmap"
            save_stack(_make_stack(image_id, centers[t], spec, rng, False), out_dir / rel)
            test_paths.append(rel)
        for i in range(spec.anomalies_per_task):
            image_id = f"{name}_test_anom_{i:03d}"
            rel = f"{name}/test/{image_id}.fmap"
            save_stack(_make_stack(image_id, centers[t], spec, rng, True), out_dir / rel)
            test_paths.append(rel)
        tasks.append(TaskEntry(name, train_paths, test_paths))
    manifest = ScenarioManifest(
        image_size=(gh * IMAGE_UPSCALE, gw * IMAGE_UPSCALE), tasks=tasks, root=out_dir
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest

"""Class-incremental benchmark driver.

Tasks are trained strictly in manifest order.  After each task the model
is evaluated on every task seen so far, filling the lower-triangular
metric matrix; the final row averaged over tasks is the headline number.
Strategies:

    cl        the method's native continual mechanism (banks with a shared
              budget, Gaussian fusion, or per-task field lists)
    finetune  lower bound: refit from the current task only
    joint     upper bound: refit from all tasks seen so far

Replay pools exist for methods that retrain a network on pixels; every
method here retains knowledge through banks or distribution statistics
instead, so configs pairing them with the replay strategy are rejected.
The ReplayBuffer type is still provided (and costed) for completeness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import padim, padim_cl, patchcore_cl
from .errors import ConfigError
from .fmap import LABEL_ANOMALOUS, LayerStack
from .manifest import ScenarioManifest
from .metrics import image_metrics, pixel_metrics
from .patchcore import build_patch_grid, pool_patches, render_map

METHODS = (
    "patchcore_cl",
    "patchcore_clpp",
    "padim_uni",
    "padim_multi",
    "padim_lite_uni",
    "padim_lite_multi",
)
STRATEGIES = ("cl", "finetune", "joint", "replay")

SCHEMA_VERSION = 1


@dataclass
class StrategyConfig:
    method: str
    strategy: str = "cl"
    replay_capacity: int = 0
    bank_budget: int = 1000
    pooling: int = 3
    neighbors: int = 9
    sigma: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}"
            )
        if self.strategy == "replay":
            raise ConfigError(
                f"method {self.method!r} retains knowledge through banks or "
                "distribution statistics; the replay strategy applies only to "
                "models retrained on raw data"
            )
        if self.replay_capacity:
            raise ConfigError("replay_capacity is only meaningful under replay")
        if self.pooling < 1 or self.pooling % 2 == 0:
            raise ConfigError(f"pooling must be odd and >= 1, got {self.pooling}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.method.startswith("patchcore"):
            if self.bank_budget < 1:
                raise ConfigError(f"bank_budget must be >= 1, got {self.bank_budget}")
            if self.neighbors < 2:
                raise ConfigError(
                    f"neighbors must be >= 2 (a single neighbor collapses the "
                    f"image score to zero), got {self.neighbors}"
                )


@dataclass
class ReplayBuffer:
    """Class-balanced reservoir over layer stacks, capped at capacity."""

    capacity: int
    seed: int = 0
    _per_task: dict = field(default_factory=dict)

    def update(self, task_name: str, stacks: list) -> None:
        rng = np.random.default_rng((self.seed, len(self._per_task)))
        self._per_task[task_name] = list(stacks)
        names = list(self._per_task)
        share = self.capacity // len(names)
        extra = self.capacity - share * len(names)
        for idx, name in enumerate(names):
            quota = share + (1 if idx < extra else 0)
            kept = self._per_task[name]
            if len(kept) > quota:
                pick = sorted(rng.choice(len(kept), size=quota, replace=False))
                self._per_task[name] = [kept[i] for i in pick]

    @property
    def entries(self) -> list:
        return [(name, s) for name, kept in self._per_task.items() for s in kept]

    def feature_bytes(self) -> int:
        return sum(s.feature_bytes() for _, s in self.entries)


@dataclass
class EvalReport:
    method: str
    strategy: str
    seed: int
    manifest_hash: str
    image_size: tuple[int, int]
    task_names: list[str]
    matrix: dict            # (t, k) 1-based -> metric dict
    final_avg: dict
    cost: dict
    per_checkpoint: list

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "strategy": self.strategy,
            "seed": self.seed,
            "manifest_hash": self.manifest_hash,
            "image_size": [int(self.image_size[0]), int(self.image_size[1])],
            "tasks": list(self.task_names),
            "matrix": {f"{t}:{k}": cell for (t, k), cell in sorted(self.matrix.items())},
            "final_avg": self.final_avg,
            "cost": self.cost,
            "per_checkpoint": self.per_checkpoint,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        matrix = {}
        for key, cell in doc["matrix"].items():
            t, k = key.split(":")
            matrix[(int(t), int(k))] = cell
        return cls(
            method=doc["method"], strategy=doc["strategy"], seed=doc["seed"],
            manifest_hash=doc["manifest_hash"],
            image_size=tuple(doc["image_size"]), task_names=list(doc["tasks"]),
            matrix=matrix, final_avg=doc["final_avg"], cost=doc["cost"],
            per_checkpoint=doc["per_checkpoint"],
        )


class _PatchcoreModel:
    def __init__(self, config: StrategyConfig):
        self.config = config
        self.variant = (patchcore_cl.VARIANT_CLPP if config.method == "patchcore_clpp"
                        else patchcore_cl.VARIANT_CL)
        self.ledger = patchcore_cl.OpLedger()
        self._fresh()

    def _fresh(self):
        self.state = patchcore_cl.BankList(total_budget=self.config.bank_budget)
        self.table = (patchcore_cl.PrototypeTable()
                      if self.variant == patchcore_cl.VARIANT_CLPP else None)

    def _patches(self, stacks):
        grids = [build_patch_grid(s, self.config.pooling) for s in stacks]
        return pool_patches(grids)

    def absorb(self, name, stacks):
        self.state = patchcore_cl.cl_update(
            self.state, self._patches(stacks), self.variant, self.ledger, name
        )
        if self.table is not None:
            self.table.prototypes.append(patchcore_cl.build_prototype(stacks))

    def refit(self, named_pools):
        self._fresh()
        stacks = [s for _, pool in named_pools for s in pool]
        label = "+".join(name for name, _ in named_pools)
        self.state = patchcore_cl.cl_update(
            self.state, self._patches(stacks), self.variant, self.ledger, label
        )
        if self.table is not None:
            self.table.prototypes.append(patchcore_cl.build_prototype(stacks))

    def score_stack(self, stack):
        amap, _task = patchcore_cl.infer(
            stack, self.state, self.table, self.variant, self.ledger,
            pooling_p=self.config.pooling, b_neighbors=self.config.neighbors,
        )
        return amap.scores, amap.image_score

    def retention_bytes(self):
        return self.state.storage_bytes()

    def prototype_bytes(self):
        return self.table.storage_bytes() if self.table is not None else 0


class _PadimUniModel:
    def __init__(self, config: StrategyConfig):
        self.config = config
        self.mode = padim.MODE_DIAG if "lite" in config.method else padim.MODE_FULL
        self.ledger = patchcore_cl.OpLedger()
        self.state = None

    def _fit(self, stacks):
        grids = [build_patch_grid(s, self.config.pooling) for s in stacks]
        return padim.fit(grids, mode=self.mode)

    def absorb(self, name, stacks):
        fld = self._fit(stacks)
        if self.state is None:
            self.state = padim_cl.start_exact(fld)
        else:
            self.state = padim_cl.fuse_exact(self.state, fld)

    def refit(self, named_pools):
        stacks = [s for _, pool in named_pools for s in pool]
        self.state = padim_cl.start_exact(self._fit(stacks))

    def score_stack(self, stack):
        grid = build_patch_grid(stack, self.config.pooling)
        return padim.score(grid, self.state.field), None

    def retention_bytes(self):
        return self.state.field.storage_bytes()

    def prototype_bytes(self):
        return 0


class _PadimMultiModel:
    def __init__(self, config: StrategyConfig):
        self.config = config
        self.mode = padim.MODE_DIAG if "lite" in config.method else padim.MODE_FULL
        self.ledger = patchcore_cl.OpLedger()
        self.fields = padim_cl.FieldList([], [])

    def _fit(self, stacks):
        grids = [build_patch_grid(s, self.config.pooling) for s in stacks]
        return padim.fit(grids, mode=self.mode)

    def absorb(self, name, stacks):
        self.fields.fields.append(self._fit(stacks))
        self.fields.task_names.append(name)

    def refit(self, named_pools):
        stacks = [s for _, pool in named_pools for s in pool]
        label = "+".join(name for name, _ in named_pools)
        self.fields = padim_cl.FieldList([self._fit(stacks)], [label])

    def score_stack(self, stack):
        grid = build_patch_grid(stack, self.config.pooling)
        scores, _winner = padim_cl.score_multimodal(grid, self.fields)
        return scores, None

    def retention_bytes(self):
        return sum(f.storage_bytes() for f in self.fields.fields)

    def prototype_bytes(self):
        return 0


def _make_model(config: StrategyConfig):
    if config.method.startswith("patchcore"):
        return _PatchcoreModel(config)
    if "multi" in config.method:
        return _PadimMultiModel(config)
    return _PadimUniModel(config)


def _evaluate_cell(model, manifest: ScenarioManifest, k: int,
                   config: StrategyConfig) -> dict:
    stacks = manifest.test_stacks(k)
    image_scores, labels, maps, masks = [], [], [], []
    h_img, w_img = manifest.image_size
    for stack in stacks:
        feature_scores, image_score = model.score_stack(stack)
        rendered = render_map(feature_scores, (h_img, w_img), config.sigma, image_score)
        image_scores.append(rendered.image_score)
        labels.append(1 if stack.label == LABEL_ANOMALOUS else 0)
        maps.append(rendered)
        masks.append(stack.mask if stack.mask is not None
                     else np.zeros((h_img, w_img), dtype=np.uint8))
    cell = image_metrics(image_scores, labels)
    cell.update(pixel_metrics(maps, masks))
    return {name: float(v) for name, v in cell.items()}


def run_scenario(manifest: ScenarioManifest, config: StrategyConfig,
                 manifest_digest: str = "") -> EvalReport:
    """Train tasks in order, evaluate the growing past, report the matrix."""
    config.validate()
    model = _make_model(config)
    matrix = {}
    per_checkpoint = []
    prev = {"phase1_ops": 0, "phase2_ops": 0, "inference_ops": 0}
    named_pools: list[tuple[str, list[LayerStack]]] = []
    for t in range(manifest.num_tasks):
        name = manifest.tasks[t].name
        train = manifest.train_stacks(t)
        named_pools.append((name, train))
        if config.strategy == "cl":
            model.absorb(name, train)
        elif config.strategy == "finetune":
            model.refit(named_pools[-1:])
        else:  # joint
            model.refit(named_pools)
        update_snap = model.ledger.snapshot()
        # past-task evaluation touches only tasks <= t (no future leakage)
        for k in range(t + 1):
            matrix[(t + 1, k + 1)] = _evaluate_cell(model, manifest, k, config)
        eval_snap = model.ledger.snapshot()
        per_checkpoint.append({
            "checkpoint": t + 1,
            "update_phase1_ops": update_snap["phase1_ops"] - prev["phase1_ops"],
            "update_phase2_ops": update_snap["phase2_ops"] - prev["phase2_ops"],
            "eval_inference_ops": eval_snap["inference_ops"] - prev["inference_ops"],
            "cumulative_distance_ops": eval_snap["distance_ops"],
            "retention_bytes": model.retention_bytes(),
        })
        prev = eval_snap
    T = manifest.num_tasks
    final_cells = [matrix[(T, k)] for k in range(1, T + 1)]
    final_avg = {
        metric: float(np.mean([c[metric] for c in final_cells]))
        for metric in final_cells[0]
    }
    ledger = model.ledger.snapshot()
    cost = {
        "model_bytes": 0,
        "retention_bytes": model.retention_bytes(),
        "prototype_bytes": model.prototype_bytes(),
        "replay_bytes": 0,
        "update_phase1_ops": ledger["phase1_ops"],
        "update_phase2_ops": ledger["phase2_ops"],
        "update_ops": ledger["phase1_ops"] + ledger["phase2_ops"],
        "inference_ops": ledger["inference_ops"],
        "distance_ops": ledger["distance_ops"],
        "inference_ops_per_image": _per_image(ledger["inference_ops"], manifest),
    }
    return EvalReport(
        method=config.method, strategy=config.strategy, seed=config.seed,
        manifest_hash=manifest_digest, image_size=manifest.image_size,
        task_names=[t.name for t in manifest.tasks],
        matrix=matrix, final_avg=final_avg, cost=cost,
        per_checkpoint=per_checkpoint,
    )


def _per_image(ops: int, manifest: ScenarioManifest) -> float:
    # every checkpoint t evaluates the test sets of tasks 1..t once
    images = sum(
        len(manifest.tasks[k].test)
        for t in range(manifest.num_tasks)
        for k in range(t + 1)
    )
    return float(ops) / images if images else 0.0


def cost_rollup(report: EvalReport, replay_buffer: ReplayBuffer | None = None) -> dict:
    """Cost summary of a completed run, with replay bytes folded in.

    The six built-in methods never carry a buffer; the parameter exists so
    externally managed replay retention is still accounted for.
    """
    cost = dict(report.cost)
    cost["replay_bytes"] = replay_buffer.feature_bytes() if replay_buffer else 0
    cost["retention_bytes"] = report.cost["retention_bytes"] + cost["replay_bytes"]
    return cost


def report_csv_rows(report: EvalReport) -> list[list]:
    """Long-format rows: one per matrix cell and metric, then cost rows."""
    rows = []
    for (t, k), cell in sorted(report.matrix.items()):
        for metric, value in sorted(cell.items()):
            rows.append([SCHEMA_VERSION, report.method, report.strategy,
                         t, k, metric, value])
    for entry in report.per_checkpoint:
        for metric in ("update_phase1_ops", "update_phase2_ops",
                       "eval_inference_ops", "retention_bytes"):
            rows.append([SCHEMA_VERSION, report.method, report.strategy,
                         entry["checkpoint"], "", metric, entry[metric]])
    return rows


CSV_HEADER = ["schema_version", "method", "strategy", "checkpoint",
              "eval_task", "metric", "value"]

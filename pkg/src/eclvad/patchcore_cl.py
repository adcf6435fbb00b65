"""Multi-task memory-bank management with a distance-operation ledger.

Two update variants share a fixed total budget S split evenly over tasks
seen so far.  The "cl" variant re-runs the greedy coreset on every old
bank when the per-task budget shrinks; "clpp" exploits the greedy prefix
property and just truncates, which costs zero distance operations and
provably yields the same banks.  Inference either scores every bank and
keeps the lowest image score ("cl") or routes through a nearest-prototype
lookup and scores one bank ("clpp").

The ledger counts one d-dimensional vector distance as one operation, the
unit in which update and inference costs are reported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coreset import farthest_first
from .errors import CapacityError, ConfigError
from .fmap import LayerStack
from .patchcore import (
    AnomalyMap,
    MemoryBank,
    build_patch_grid,
    read_bank,
    score_grid,
    write_bank,
)

VARIANT_CL = "cl"
VARIANT_CLPP = "clpp"


@dataclass
class OpLedger:
    """Monotone distance-operation counters, split by phase."""

    phase1_ops: int = 0
    phase2_ops: int = 0
    inference_ops: int = 0

    @property
    def distance_ops(self) -> int:
        return self.phase1_ops + self.phase2_ops + self.inference_ops

    def add_phase1(self, n: int) -> None:
        self.phase1_ops += int(n)

    def add_phase2(self, n: int) -> None:
        self.phase2_ops += int(n)

    def add_inference(self, n: int) -> None:
        self.inference_ops += int(n)

    def snapshot(self) -> dict:
        return {
            "phase1_ops": self.phase1_ops,
            "phase2_ops": self.phase2_ops,
            "inference_ops": self.inference_ops,
            "distance_ops": self.distance_ops,
        }


@dataclass
class BankList:
    banks: list[MemoryBank] = field(default_factory=list)
    total_budget: int = 0
    tasks_seen: int = 0

    def __len__(self) -> int:
        return len(self.banks)

    def stored_vectors(self) -> int:
        return sum(len(b) for b in self.banks)

    def storage_bytes(self) -> int:
        return sum(4 * len(b) * b.d for b in self.banks)


@dataclass
class PrototypeTable:
    prototypes: list[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return 0 if not self.prototypes else self.prototypes[0].size

    def __len__(self) -> int:
        return len(self.prototypes)

    def storage_bytes(self) -> int:
        return 4 * len(self.prototypes) * self.dim


def cl_update(state: BankList, new_task_patches: np.ndarray, variant: str,
              ledger: OpLedger, task_name: str = "") -> BankList:
    """Absorb one new task: shrink old banks to the new budget, add a bank.

    The per-task budget is floor(S / i) for the i-th task.  When the new
    task brings fewer patches than the budget its bank keeps them all (old
    banks always have enough, the budget never grows).
    """
    if variant not in (VARIANT_CL, VARIANT_CLPP):
        raise ConfigError(f"unknown variant {variant!r}")
    i = state.tasks_seen + 1
    budget = state.total_budget // i
    if budget == 0:
        raise CapacityError(state.total_budget, i)

    shrunk: list[MemoryBank] = []
    for bank in state.banks:
        keep = min(budget, len(bank))
        if variant == VARIANT_CL:
            # honest recompression; the result equals the stored prefix
            cs = farthest_first(bank.vectors, keep, seed_index=0)
            ledger.add_phase1(len(bank) * keep)
            vectors = bank.vectors[cs.indices]
        else:
            vectors = bank.vectors[:keep]
        shrunk.append(MemoryBank(vectors.copy(), bank.d, bank.task_name,
                                 bank.gonzalez_seed))

    patches = np.asarray(new_task_patches, dtype=np.float32)
    if patches.ndim != 2 or len(patches) == 0:
        raise ValueError("new_task_patches must be a non-empty (n, d) array")
    size = min(budget, len(patches))
    cs = farthest_first(patches, size, seed_index=0)
    ledger.add_phase2(len(patches) * size)
    shrunk.append(MemoryBank(patches[cs.indices].copy(), patches.shape[1],
                             task_name or f"task{i:02d}", 0))
    return BankList(banks=shrunk, total_budget=state.total_budget, tasks_seen=i)


def flatten_last_layer(stack: LayerStack) -> np.ndarray:
    return stack.layers[-1].data.astype(np.float64)


def build_prototype(train_stacks: list[LayerStack]) -> np.ndarray:
    """Mean of the last layer's feature map, flattened channel-major."""
    if not train_stacks:
        raise ValueError("no training stacks")
    flats = [flatten_last_layer(s) for s in train_stacks]
    ref = flats[0].shape
    for f in flats[1:]:
        if f.shape != ref:
            raise ValueError(f"last-layer shape mismatch: {f.shape} != {ref}")
    return np.mean(flats, axis=0)


def identify_task(test_stack: LayerStack, table: PrototypeTable,
                  ledger: OpLedger) -> int:
    """Nearest-prototype lookup; one distance op per known task."""
    if not table.prototypes:
        raise ValueError("empty prototype table")
    flat = flatten_last_layer(test_stack)
    if flat.size != table.dim:
        raise ValueError(f"feature dim {flat.size} != prototype dim {table.dim}")
    dists = np.array([np.linalg.norm(flat - p) for p in table.prototypes])
    ledger.add_inference(len(table))
    return int(np.argmin(dists))  # lowest index wins ties


def infer(test_stack: LayerStack, state: BankList, table: PrototypeTable | None,
          variant: str, ledger: OpLedger, pooling_p: int = 3,
          b_neighbors: int = 9) -> tuple[AnomalyMap, int]:
    """Feature-resolution anomaly map plus the task whose bank was used."""
    if not state.banks:
        raise ValueError("empty bank list")
    grid = build_patch_grid(test_stack, pooling_p)
    positions = grid.h_star * grid.w_star
    if variant == VARIANT_CL:
        best_map, best_task = None, -1
        for j, bank in enumerate(state.banks):
            amap = score_grid(grid, bank, min(b_neighbors, len(bank)))
            ledger.add_inference(positions * len(bank))
            if best_map is None or amap.image_score < best_map.image_score:
                best_map, best_task = amap, j
        return best_map, best_task
    if variant == VARIANT_CLPP:
        if table is None:
            raise ValueError("clpp inference requires a prototype table")
        j = identify_task(test_stack, table, ledger)
        bank = state.banks[j]
        amap = score_grid(grid, bank, min(b_neighbors, len(bank)))
        ledger.add_inference(positions * len(bank))
        return amap, j
    raise ConfigError(f"unknown variant {variant!r}")


def save_bank_list(state: BankList, directory, variant: str = VARIANT_CL) -> None:
    """One BANK file per task plus a JSON index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, bank in enumerate(state.banks):
        fname = f"bank_{i:03d}.bank"
        with open(directory / fname, "wb") as f:
            write_bank(bank, f)
        entries.append({"task": bank.task_name, "file": fname})
    index = {
        "schema_version": 1,
        "S": state.total_budget,
        "tasks": [b.task_name for b in state.banks],
        "variant": variant,
        "files": entries,
    }
    (directory / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_bank_list(directory) -> tuple[BankList, str]:
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"no bank-list index under {directory}") from exc
    banks = []
    for entry in index["files"]:
        with open(directory / entry["file"], "rb") as f:
            banks.append(read_bank(f))
    state = BankList(banks=banks, total_budget=int(index["S"]),
                     tasks_seen=len(banks))
    return state, str(index["variant"])

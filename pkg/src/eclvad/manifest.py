"""Scenario manifests: the JSON index tying tasks to stack files on disk.

Schema (v1):

    {"image_size": [H, W],
     "tasks": [{"name": "...", "train": [paths], "test": [paths]}, ...]}

Paths are relative to the manifest file.  Task order in the list is the
continual-learning task order.  Train stacks must be labeled normal; that
is checked when stacks are loaded, not at score time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DataError
from .fmap import LABEL_NORMAL, LayerStack, load_stack


@dataclass
class TaskEntry:
    name: str
    train: list[str]
    test: list[str]


@dataclass
class ScenarioManifest:
    image_size: tuple[int, int]
    tasks: list[TaskEntry]
    root: Path  # directory paths are relative to

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def train_stacks(self, task_index: int) -> list[LayerStack]:
        """Load task training stacks, enforcing the normal-only protocol."""
        entry = self.tasks[task_index]
        stacks = []
        for rel in entry.train:
            stack = load_stack(self.root / rel)
            if stack.label != LABEL_NORMAL:
                raise DataError(
                    f"train stack {rel!r} of task {entry.name!r} is not labeled normal"
                )
            stacks.append(stack)
        return stacks

    def test_stacks(self, task_index: int) -> list[LayerStack]:
        entry = self.tasks[task_index]
        return [load_stack(self.root / rel) for rel in entry.test]


def manifest_to_dict(manifest: ScenarioManifest) -> dict:
    return {
        "image_size": [int(manifest.image_size[0]), int(manifest.image_size[1])],
        "tasks": [
            {"name": t.name, "train": list(t.train), "test": list(t.test)}
            for t in manifest.tasks
        ],
    }


def save_manifest(manifest: ScenarioManifest, path) -> None:
    path = Path(path)
    blob = json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n"
    path.write_text(blob, encoding="utf-8")


def load_manifest(path) -> ScenarioManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        image_size = (int(doc["image_size"][0]), int(doc["image_size"][1]))
        tasks = [
            TaskEntry(str(t["name"]), [str(p) for p in t["train"]], [str(p) for p in t["test"]])
            for t in doc["tasks"]
        ]
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"manifest {path} is missing required fields: {exc}") from exc
    if not tasks:
        raise ConfigError(f"manifest {path} declares no tasks")
    return ScenarioManifest(image_size=image_size, tasks=tasks, root=path.parent)


def manifest_hash(path) -> str:
    """Identity of a manifest file for report compatibility checks."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

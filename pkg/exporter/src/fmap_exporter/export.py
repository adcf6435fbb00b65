"""Backbone feature extraction into an FMAP scenario tree.

Images are resized to the working resolution, normalized with the
ImageNet statistics the supported backbones were trained under, and
pushed through a frozen torchvision model; the requested intermediate
activations become one FMAP record per layer in a single stack file per
image.  Ground-truth masks are resized (nearest) to the working
resolution and bit-packed onto the first record.  Tasks appear in the
manifest in alphabetical category order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision.models import get_model
from torchvision.models.feature_extraction import (
    create_feature_extractor,
    get_graph_node_names,
)

from .datasets import WALKERS, DatasetError, ImageEntry
from .writer import LABEL_ANOMALOUS, LABEL_NORMAL, write_stack_file

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ExportSpec:
    dataset_root: str
    dataset_layout: str                  # "mvtec" | "visa"
    backbone: str                        # torchvision model name
    layers: list[str]                    # graph node names, extraction order
    output_dir: str
    image_size: tuple[int, int] = (224, 224)
    weights: str = "DEFAULT"             # torchvision weights tag or "none"
    batch_size: int = 4

    @classmethod
    def from_dict(cls, doc: dict) -> "ExportSpec":
        try:
            return cls(
                dataset_root=str(doc["dataset_root"]),
                dataset_layout=str(doc["dataset_layout"]),
                backbone=str(doc["backbone"]),
                layers=[str(l) for l in doc["layers"]],
                output_dir=str(doc["output_dir"]),
                image_size=tuple(int(v) for v in doc.get("image_size", (224, 224))),
                weights=str(doc.get("weights", "DEFAULT")),
                batch_size=int(doc.get("batch_size", 4)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad export spec: {exc}") from exc

    def validate(self) -> None:
        if self.dataset_layout not in WALKERS:
            raise ValueError(
                f"unknown dataset_layout {self.dataset_layout!r}; "
                f"choose from {sorted(WALKERS)}"
            )
        if not self.layers:
            raise ValueError("layers must name at least one graph node")
        if self.image_size[0] < 32 or self.image_size[1] < 32:
            raise ValueError(f"image_size {self.image_size} too small")


def build_extractor(spec: ExportSpec) -> torch.nn.Module:
    weights = None if spec.weights.lower() == "none" else spec.weights
    torch.manual_seed(0)  # reproducible activations for untrained weights
    model = get_model(spec.backbone, weights=weights)
    model.eval()
    _, eval_nodes = get_graph_node_names(model)
    # a submodule prefix stands for its last inner node, as the extractor
    # itself resolves it
    known = set(eval_nodes)
    missing = [l for l in spec.layers
               if l not in known and not any(n.startswith(l + ".") for n in known)]
    if missing:
        raise ValueError(
            f"backbone {spec.backbone!r} has no nodes {missing}; "
            f"available nodes include {eval_nodes[:10]} ... {eval_nodes[-5:]}"
        )
    return create_feature_extractor(model, return_nodes=list(spec.layers))


def load_image_tensor(path: Path, size: tuple[int, int]) -> torch.Tensor:
    img = Image.open(path).convert("RGB").resize((size[1], size[0]), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.array(IMAGENET_MEAN, dtype=np.float32)) / np.array(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1))


def load_mask(path: Path, size: tuple[int, int]) -> np.ndarray:
    img = Image.open(path).convert("L").resize((size[1], size[0]), Image.NEAREST)
    return (np.asarray(img) > 127).astype(np.uint8)


def export(spec: ExportSpec) -> Path:
    """Write the FMAP tree plus manifest.json; returns the manifest path."""
    spec.validate()
    root = Path(spec.dataset_root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    entries = WALKERS[spec.dataset_layout](root)
    extractor = build_extractor(spec)
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks: dict[str, dict[str, list[str]]] = {}
    batch: list[tuple[ImageEntry, torch.Tensor]] = []

    def flush() -> None:
        if not batch:
            return
        tensors = torch.stack([t for _, t in batch])
        with torch.no_grad():
            outputs = extractor(tensors)
        for row, (entry, _) in enumerate(batch):
            layers = [outputs[name][row].numpy() for name in spec.layers]
            rel = f"{entry.category}/{entry.split}/{entry.kind}_{entry.path.stem}.fmap"
            dest = out_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            mask = load_mask(entry.mask_path, spec.image_size) \
                if entry.mask_path is not None else None
            label = LABEL_ANOMALOUS if entry.anomalous else LABEL_NORMAL
            image_id = f"{entry.category}/{entry.kind}/{entry.path.stem}"
            write_stack_file(dest, image_id, layers, label, mask)
            slot = tasks.setdefault(entry.category, {"train": [], "test": []})
            slot[entry.split].append(rel)
        batch.clear()

    for entry in entries:
        batch.append((entry, load_image_tensor(entry.path, spec.image_size)))
        if len(batch) >= spec.batch_size:
            flush()
    flush()

    manifest = {
        "image_size": [int(spec.image_size[0]), int(spec.image_size[1])],
        "tasks": [
            {"name": name, "train": slots["train"], "test": slots["test"]}
            for name, slots in sorted(tasks.items())
        ],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path

"""Directory walkers for the two supported dataset layouts.

Both yield the same record shape: (category, split, image path, label,
mask path or None) with categories in alphabetical order and files sorted
inside each category, so an export is reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class DatasetError(RuntimeError):
    pass


@dataclass
class ImageEntry:
    category: str
    split: str          # "train" | "test"
    kind: str           # "good", defect name, "normal", "anomaly"
    path: Path
    anomalous: bool
    mask_path: Path | None


def _images_in(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def _categories(root: Path) -> list[Path]:
    cats = sorted(p for p in root.iterdir() if p.is_dir())
    if not cats:
        raise DatasetError(f"no category directories under {root}")
    return cats


def walk_mvtec(root: Path) -> list[ImageEntry]:
    """<cat>/train/good, <cat>/test/<kind>, <cat>/ground_truth/<kind>."""
    entries = []
    for cat in _categories(root):
        train_good = cat / "train" / "good"
        test_dir = cat / "test"
        if not train_good.is_dir() or not test_dir.is_dir():
            raise DatasetError(
                f"category {cat.name!r} is missing {train_good} or {test_dir}"
            )
        for img in _images_in(train_good):
            entries.append(ImageEntry(cat.name, "train", "good", img, False, None))
        for kind_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            anomalous = kind_dir.name != "good"
            for img in _images_in(kind_dir):
                mask = None
                if anomalous:
                    mask = (cat / "ground_truth" / kind_dir.name
                            / f"{img.stem}_mask.png")
                    if not mask.is_file():
                        raise DatasetError(
                            f"missing ground-truth mask for {img}: expected {mask}"
                        )
                entries.append(
                    ImageEntry(cat.name, "test", kind_dir.name, img, anomalous, mask)
                )
    return entries


def walk_visa(root: Path, train_fraction: float = 0.8) -> list[ImageEntry]:
    """<cat>/Data/Images/{Normal,Anomaly}, <cat>/Data/Masks/Anomaly.

    The raw layout has no train/test split; the leading train_fraction of
    the sorted normal images becomes the training set.
    """
    entries = []
    for cat in _categories(root):
        normal_dir = cat / "Data" / "Images" / "Normal"
        anomaly_dir = cat / "Data" / "Images" / "Anomaly"
        if not normal_dir.is_dir():
            raise DatasetError(f"category {cat.name!r} is missing {normal_dir}")
        normals = _images_in(normal_dir)
        if not normals:
            raise DatasetError(f"no normal images under {normal_dir}")
        cut = max(1, int(len(normals) * train_fraction))
        for img in normals[:cut]:
            entries.append(ImageEntry(cat.name, "train", "normal", img, False, None))
        for img in normals[cut:]:
            entries.append(ImageEntry(cat.name, "test", "normal", img, False, None))
        if anomaly_dir.is_dir():
            for img in _images_in(anomaly_dir):
                mask = cat / "Data" / "Masks" / "Anomaly" / f"{img.stem}.png"
                if not mask.is_file():
                    raise DatasetError(
                        f"missing ground-truth mask for {img}: expected {mask}"
                    )
                entries.append(
                    ImageEntry(cat.name, "test", "anomaly", img, True, mask)
                )
    return entries


WALKERS = {"mvtec": walk_mvtec, "visa": walk_visa}

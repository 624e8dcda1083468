"""Labelled image collections in the one-directory-per-class layout.

``<root>/<ClassName>/<file>``: a sample's class is its immediate parent
directory name.  Samples are always ordered by (class, filename) so every
downstream split, shuffle and report is reproducible.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import images
from .tensor import DTYPE, RngState

log = logging.getLogger(__name__)

DROP = "DROP"

CLASS_MODES = {
    "four": {},
    "three_drop_moderate": {
        "MildDemented": "MildDemented",
        "ModerateDemented": DROP,
        "NonDemented": "NonDemented",
        "VeryMildDemented": "VeryMildDemented",
    },
    "two_merged": {
        "MildDemented": "Demented",
        "ModerateDemented": "Demented",
        "VeryMildDemented": "Demented",
        "NonDemented": "NonDemented",
    },
}


class DataError(ValueError):
    pass


@dataclass
class LabeledDataset:
    images: list[np.ndarray]
    targets: np.ndarray
    labels: list[str]
    paths: list[str] = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"duplicate class names {self.labels}")
        if len(self.images) != len(self.targets):
            raise DataError("images and targets differ in length")
        if len(self.targets) and (self.targets.min() < 0 or self.targets.max() >= len(self.labels)):
            raise DataError("class index outside the label map")
        if not self.paths:
            self.paths = [f"{self.labels[t]}/{i:06d}" for i, t in enumerate(self.targets)]

    def __len__(self):
        return len(self.targets)

    def counts(self) -> dict[str, int]:
        tally = np.bincount(self.targets, minlength=len(self.labels))
        return {name: int(c) for name, c in zip(self.labels, tally)}

    def subset(self, indices) -> LabeledDataset:
        indices = [int(i) for i in indices]
        return LabeledDataset([self.images[i] for i in indices], self.targets[indices], list(self.labels),
                              [self.paths[i] for i in indices])

    def to_arrays(self, size: int | tuple[int, int] | None = None, channels: int = 1):
        """Stack into a float32 ``[N, C, H, W]`` batch of raw 0..255 intensities."""
        if isinstance(size, int):
            size = (size, size)
        batch = []
        for img in self.images:
            img = images.to_grayscale(img) if channels == 1 else _as_rgb(img)
            if size is not None and img.shape[:2] != tuple(size):
                img = images.resize(img, *size)
            arr = img[None] if img.ndim == 2 else img.transpose(2, 0, 1)
            batch.append(arr.astype(DTYPE))
        if not batch:
            h, w = size or (1, 1)
            return np.zeros((0, channels, h, w), DTYPE), self.targets.copy()
        return np.stack(batch), self.targets.copy()


def _as_rgb(img):
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


def load_dataset_dir(root, labels: list[str] | None = None, workers: int = 4) -> LabeledDataset:
    """Load ``root/<class>/<file>``; undecodable files are skipped and counted."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    found = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not found:
        raise DataError(f"dataset root {root} has no class directories")
    if labels is None:
        labels = found
    else:
        missing = sorted(set(found) - set(labels))
        if missing:
            raise DataError(f"directories {missing} are not in the label map {labels}")
    entries = []
    for index, name in enumerate(labels):
        directory = root / name
        files = sorted(p.name for p in directory.iterdir() if p.is_file()) if directory.is_dir() else []
        if not files:
            log.warning("class %s has no images", name)
        entries += [(index, f"{name}/{f}") for f in files]

    def decode(entry):
        try:
            return images.read_image(root / entry[1])
        except (images.ImageDecodeError, OSError) as exc:
            log.warning("skipping %s: %s", entry[1], exc)
            return None

    # map() yields in submission order regardless of completion order.
    with ThreadPoolExecutor(max(1, workers)) as pool:
        decoded = list(pool.map(decode, entries))
    kept = [(e, img) for e, img in zip(entries, decoded) if img is not None]
    ds = LabeledDataset([img for _, img in kept], [e[0] for e, _ in kept], list(labels),
                        [e[1] for e, _ in kept])
    ds.skipped = len(entries) - len(kept)
    log.info("loaded %d images from %s: %s (skipped %d)", len(ds), root, ds.counts(), ds.skipped)
    return ds


def stratified_split(ds: LabeledDataset, rng: RngState, fraction: float | None = None,
                     per_class: int | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-class sampling without replacement into (train, val).

    Fraction mode moves ``floor(count * fraction)`` samples of each class to
    val; fixed mode moves exactly ``per_class``.
    """
    if (fraction is None) == (per_class is None):
        raise ValueError("give exactly one of fraction or per_class")
    if fraction is not None and not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    counts = ds.counts()
    if per_class is not None:
        short = {k: v for k, v in counts.items() if v < per_class}
        if per_class < 0 or short:
            raise DataError(f"cannot take {per_class} per class; classes too small: {short}")
    exact = Fraction(str(fraction)) if fraction is not None else None
    val_idx = []
    for c in range(len(ds.labels)):
        members = np.flatnonzero(ds.targets == c)
        take = per_class if per_class is not None else math.floor(exact * len(members))
        val_idx += members[rng.permutation(len(members))[:take]].tolist()
    val_mask = np.zeros(len(ds), bool)
    val_mask[val_idx] = True
    return ds.subset(np.flatnonzero(~val_mask)), ds.subset(np.flatnonzero(val_mask))


def merge_classes(ds: LabeledDataset, mapping: dict[str, str]) -> LabeledDataset:
    """Relabel through ``mapping``; classes mapped to ``DROP`` are removed.

    The new label map is the sorted set of target names.
    """
    unmapped = [name for name in ds.labels if name not in mapping]
    if unmapped:
        raise DataError(f"class mapping does not cover {unmapped}")
    new_labels = sorted({v for v in mapping.values() if v != DROP and v is not None})
    lookup = [new_labels.index(mapping[n]) if mapping[n] not in (DROP, None) else -1 for n in ds.labels]
    new_targets = np.array([lookup[t] for t in ds.targets], dtype=np.int64)
    keep = np.flatnonzero(new_targets >= 0)
    return LabeledDataset([ds.images[i] for i in keep], new_targets[keep], new_labels,
                          [ds.paths[i] for i in keep])


def class_mapping(mode: str, labels: list[str]) -> dict[str, str]:
    if mode not in CLASS_MODES:
        raise ValueError(f"unknown class mode {mode!r}; expected one of {sorted(CLASS_MODES)}")
    table = CLASS_MODES[mode]
    if mode != "four":
        missing = [n for n in labels if n not in table]
        if missing:
            raise DataError(f"class mode {mode!r} does not know classes {missing}")
    return {n: table.get(n, n) for n in labels}


# -------------------------------------------------------------- augmentation

AUGMENTATIONS = ("crop", "flip_h", "flip_v", "grayscale", "rotate")


def augment_image(img: np.ndarray, flags: dict, rng: RngState, crop_fraction=0.9, max_degrees=15.0):
    h, w = img.shape[:2]
    out = img
    if flags.get("grayscale"):
        out = images.to_grayscale(out)
    if flags.get("crop"):
        ch, cw = max(1, round(h * crop_fraction)), max(1, round(w * crop_fraction))
        out = images.resize(images.random_crop(out, ch, cw, rng), h, w)
    if flags.get("flip_h") and rng.random() < 0.5:
        out = images.flip_h(out)
    if flags.get("flip_v") and rng.random() < 0.5:
        out = images.flip_v(out)
    if flags.get("rotate"):
        out = images.rotate(out, float(rng.uniform(-max_degrees, max_degrees)))
    return out


def augment_dataset(ds: LabeledDataset, flags: dict, rng: RngState) -> LabeledDataset:
    """Original samples followed by one augmented copy of each."""
    unknown = set(flags) - set(AUGMENTATIONS)
    if unknown:
        raise ValueError(f"unknown augmentations {sorted(unknown)}")
    if not any(flags.values()):
        return ds
    extra = [augment_image(img, flags, rng) for img in ds.images]
    return LabeledDataset(ds.images + extra, np.concatenate([ds.targets, ds.targets]), list(ds.labels),
                          ds.paths + [f"{p}#aug" for p in ds.paths])


# ------------------------------------------------------------------ manifests


def manifest_text(ds: LabeledDataset) -> str:
    return "".join(f"{path}\t{ds.labels[t]}\n" for path, t in zip(ds.paths, ds.targets))


def read_manifest(path, root) -> LabeledDataset:
    rows = [line.split("\t") for line in Path(path).read_text("utf-8").splitlines() if line]
    labels = sorted({cls for _, cls in rows})
    imgs = [images.read_image(Path(root) / rel) for rel, _ in rows]
    return LabeledDataset(imgs, [labels.index(cls) for _, cls in rows], labels, [rel for rel, _ in rows])


def write_tree(ds: LabeledDataset, root) -> None:
    """Write a dataset out in the class-directory layout as PGM/PPM files."""
    root = Path(root)
    for name in ds.labels:
        (root / name).mkdir(parents=True, exist_ok=True)
    for img, path in zip(ds.images, ds.paths):
        target = root / path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(images.encode_image(img))


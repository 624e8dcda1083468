"""Synthetic texture images used as stand-in fixtures for the MRI data."""

from __future__ import annotations

import numpy as np

from .dataset import LabeledDataset
from .images import to_uint8
from .tensor import RngState

KAGGLE_CLASSES = ("MildDemented", "ModerateDemented", "NonDemented", "VeryMildDemented")
KAGGLE_TRAIN_COUNTS = {"MildDemented": 717, "ModerateDemented": 52, "NonDemented": 2560, "VeryMildDemented": 1792}

# Texture assigned to each fixture class.  The three demented stages share
# "row-ish" stripe orientations, so the merged two-class task stays separable.
KAGGLE_TEXTURES = {
    "MildDemented": "horizontal",
    "ModerateDemented": "diagonal",
    "NonDemented": "vertical",
    "VeryMildDemented": "antidiagonal",
}

TEXTURES = ("horizontal", "vertical", "diagonal", "antidiagonal", "checker", "blobs")


def texture_image(kind: str, size: int, rng: RngState, noise: float = 12.0, contrast=(50.0, 90.0)) -> np.ndarray:
    """One ``size x size`` grayscale texture with random period, phase and contrast."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    period = rng.uniform(4.0, 7.0)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(*contrast)
    k = 2 * np.pi / period
    if kind == "horizontal":
        field = np.sin(k * yy + phase)
    elif kind == "vertical":
        field = np.sin(k * xx + phase)
    elif kind == "diagonal":
        field = np.sin(k * (xx + yy) / np.sqrt(2) + phase)
    elif kind == "antidiagonal":
        field = np.sin(k * (xx - yy) / np.sqrt(2) + phase)
    elif kind == "checker":
        field = np.sin(k * xx + phase) * np.sin(k * yy + phase)
    elif kind == "blobs":
        field = np.zeros_like(xx)
        for _ in range(4):
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 10, size / 5)
            field += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        field = 2 * field / max(field.max(), 1e-9) - 1
    else:
        raise ValueError(f"unknown texture {kind!r}; expected one of {TEXTURES}")
    base = rng.uniform(100, 156)
    img = base + amp * field + rng.uniform(-noise, noise, field.shape)
    return to_uint8(img)


def texture_dataset(kinds: dict[str, str], per_class: int | dict[str, int], size: int, rng: RngState,
                    **texture_kw) -> LabeledDataset:
    """Classes named by ``kinds`` keys (sorted), each filled with its texture."""
    labels = sorted(kinds)
    imgs, targets, paths = [], [], []
    for index, name in enumerate(labels):
        count = per_class[name] if isinstance(per_class, dict) else per_class
        for i in range(count):
            imgs.append(texture_image(kinds[name], size, rng, **texture_kw))
            targets.append(index)
            paths.append(f"{name}/{name.lower()}_{i:05d}.pgm")
    return LabeledDataset(imgs, targets, labels, paths)


def two_class_textures(per_class: int, size: int = 32, seed: int = 0, **kw) -> LabeledDataset:
    """Demented (horizontal stripes) vs NonDemented (vertical stripes)."""
    return texture_dataset({"Demented": "horizontal", "NonDemented": "vertical"}, per_class, size,
                           RngState(seed), **kw)


def kaggle_fixture(counts: dict[str, int] | None = None, size: int = 32, seed: int = 0, **kw) -> LabeledDataset:
    """Four-class fixture in the Kaggle class layout (default: tiny counts)."""
    counts = counts or {"MildDemented": 14, "ModerateDemented": 4, "NonDemented": 20, "VeryMildDemented": 12}
    return texture_dataset({name: KAGGLE_TEXTURES[name] for name in counts}, counts, size, RngState(seed), **kw)

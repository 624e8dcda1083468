"""Seeded random models for the finite-difference gradient oracle.

Every layer kind appears in at least one case; all spatial sizes are <= 8.
"""

import numpy as np

from cadnn.layers import Conv2D, Dense, Flatten, Pad, Pool, PoolMode, ReLU, Rescale, Softmax
from cadnn.network import ResidualBlock, Sequential
from cadnn.tensor import RngState
from cadnn.zoo import residual_style_spec


def _head(c, h, w, k, rng, init="he"):
    return [Flatten("flatten"), Dense("head", c * h * w, k, rng, init=init), Softmax("softmax")]


def _random_biases(model, seed):
    # Zero biases over zero activations put pre-activations exactly on the
    # relu kink, where the central difference sees a half slope.
    rng = RngState(20_000 + seed)
    for leaf, key, value in model.parameters():
        if key == "bias":
            value[...] = rng.uniform(-0.5, 0.5, value.shape)
    return model


def _case(name, layers, shape, seed, scale=2.0, offset=-0.5):
    x = RngState(10_000 + seed).uniform(0, 1, shape) * scale + offset * scale
    model = _random_biases(Sequential(layers, shape), seed)
    return name, model, x.astype(np.float32), seed % model.num_classes


def cases():
    out = []
    r = lambda s: RngState(s)  # noqa: E731
    out.append(_case("dense", _head(2, 3, 3, 3, r(1)), (2, 3, 3), 1))
    out.append(_case("dense_glorot", _head(1, 4, 4, 4, r(2), "glorot"), (1, 4, 4), 2))
    out.append(_case("mlp", [Flatten("flatten"), Dense("fc", 12, 6, r(3)), ReLU("relu"),
                             Dense("head", 6, 3, r(3)), Softmax("softmax")], (3, 2, 2), 3))
    out.append(_case("rescale", [Rescale("rescale", 1 / 255)] + _head(1, 3, 3, 2, r(4)), (1, 3, 3), 4,
                     scale=255.0, offset=0.0))
    out.append(_case("conv3x3", [Conv2D("conv", 2, 3, 3, r(5))] + _head(3, 4, 4, 3, r(5)), (2, 6, 6), 5))
    out.append(_case("conv1x1", [Conv2D("conv", 3, 2, 1, r(6))] + _head(2, 4, 4, 2, r(6)), (3, 4, 4), 6))
    out.append(_case("conv2x3", [Conv2D("conv", 1, 2, (2, 3), r(7))] + _head(2, 4, 3, 3, r(7)), (1, 5, 5), 7))
    out.append(_case("conv_full", [Conv2D("conv", 2, 4, 5, r(8))] + _head(4, 1, 1, 3, r(8)), (2, 5, 5), 8))
    out.append(_case("relu", [Conv2D("conv", 1, 3, 3, r(9)), ReLU("relu")] + _head(3, 4, 4, 2, r(9)),
                     (1, 6, 6), 9))
    for i, mode in enumerate(("max", "average", "sum")):
        out.append(_case(f"pool_{mode}", [Conv2D("conv", 1, 2, 3, r(10 + i)), Pool("pool", PoolMode(mode))]
                         + _head(2, 3, 3, 3, r(10 + i)), (1, 8, 8), 10 + i))
    out.append(_case("pool_overlap", [Pool("pool", PoolMode("max", (3, 3), 1))] + _head(2, 4, 4, 2, r(13)),
                     (2, 6, 6), 13))
    out.append(_case("pool_avg_overlap", [Pool("pool", PoolMode("average", (2, 2), 1))]
                     + _head(1, 5, 5, 2, r(14)), (1, 6, 6), 14))
    out.append(_case("pad", [Pad("pad"), Conv2D("conv", 1, 2, 3, r(15))] + _head(2, 5, 5, 2, r(15)),
                     (1, 5, 5), 15))
    out.append(_case("residual", [ResidualBlock("res", 2, 2, r(16))] + _head(2, 5, 5, 3, r(16)),
                     (2, 5, 5), 16))
    out.append(_case("residual_proj", [ResidualBlock("res", 1, 3, r(17)), ReLU("relu")]
                     + _head(3, 4, 4, 2, r(17)), (1, 4, 4), 17))
    for seed in (18, 19, 20, 21):
        rng = r(seed)
        out.append(_case(f"composed_{seed}", [Conv2D("conv", 1, 3, 3, rng), ReLU("relu"),
                                              Pool("pool", PoolMode("max"))] + _head(3, 2, 2, 3, rng),
                         (1, 6, 6), seed))
    rng = r(22)
    out.append(_case("composed_deep", [Conv2D("conv1", 2, 4, 3, rng), ReLU("relu1"), Conv2D("conv2", 4, 4, 3, rng),
                                       ReLU("relu2"), Pool("pool", PoolMode("max"))] + _head(4, 2, 2, 4, rng),
                     (2, 8, 8), 22))
    spec = residual_style_spec((1, 8, 8), 3, blocks=2, stem=2)
    out.append(("residual_model", _random_biases(spec.build(r(23)), 23),
                 (RngState(10_023).uniform(0, 255, (1, 8, 8))).astype(np.float32), 1))
    return out

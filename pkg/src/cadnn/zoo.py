"""Architecture builders and transfer-learning surgery.

Builders first produce a :class:`ModelSpec` (plain layer descriptors), so
large profiles can be shape-checked and counted without training them.
Convolutions are valid (unpadded), so each 3x3 conv trims two pixels per
axis; builders reject inputs too small for their stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .layers import Conv2D, Dense, Flatten, Pool, PoolMode, ReLU, Rescale, Softmax
from .network import ResidualBlock, Sequential
from .tensor import RngState, ShapeError

VGG_PROFILES = {
    # full: the public 16-layer configuration (13 conv + 3 dense)
    "full": {"blocks": (2, 2, 3, 3, 3), "widths": (64, 128, 256, 512, 512), "dense": (4096, 4096)},
    "desk": {"blocks": (2, 2), "widths": (8, 16), "dense": (32, 32)},
}


@dataclass
class ModelSpec:
    """Ordered layer descriptors plus input shape and class count."""

    layers: list[dict]
    input_shape: tuple[int, int, int]
    num_classes: int
    builder: str = "custom"
    options: dict = field(default_factory=dict)

    def build(self, rng: RngState | None = None, labels: list[str] | None = None) -> Sequential:
        """Allocate the model; ``rng=None`` gives zero weights (cheap shape check)."""
        layers = [layer_from_descriptor(d, rng) for d in self.layers]
        meta = {"builder": self.builder, "options": self.options, "num_classes": self.num_classes,
                "input_shape": list(self.input_shape)}
        if labels is not None:
            meta["labels"] = list(labels)
        model = Sequential(layers, self.input_shape, meta)
        if model.num_classes != self.num_classes:
            raise ShapeError(f"head width {model.num_classes} != class count {self.num_classes}")
        return model

    def check(self) -> list[tuple[int, ...]]:
        return self.build(None).check_shapes()

    def to_dict(self) -> dict:
        return {"builder": self.builder, "options": self.options, "input_shape": list(self.input_shape),
                "num_classes": self.num_classes, "layers": self.layers}

    @classmethod
    def from_dict(cls, data: dict) -> ModelSpec:
        return cls([dict(d) for d in data["layers"]], tuple(data["input_shape"]), int(data["num_classes"]),
                   data.get("builder", "custom"), dict(data.get("options", {})))


def layer_from_descriptor(desc: dict, rng: RngState | None):
    kind, name = desc["kind"], desc["name"]
    if kind == "rescale":
        return Rescale(name, desc.get("factor", 1 / 255))
    if kind == "conv2d":
        return Conv2D(name, desc["in_channels"], desc["out_channels"], tuple(desc["kernel"]), rng)
    if kind == "relu":
        return ReLU(name)
    if kind == "pool":
        return Pool(name, PoolMode(desc.get("mode", "max"), tuple(desc.get("window", (2, 2))), desc.get("stride")))
    if kind == "flatten":
        return Flatten(name)
    if kind == "dense":
        return Dense(name, desc["in_features"], desc["out_features"], rng, desc.get("init", "he"))
    if kind == "softmax":
        return Softmax(name)
    if kind == "residual":
        return ResidualBlock(name, desc["in_channels"], desc["out_channels"], rng)
    raise ValueError(f"unknown layer kind {kind!r}")


class _SpecWriter:
    """Tracks the running shape while descriptors are appended."""

    def __init__(self, input_shape):
        if len(input_shape) != 3 or min(input_shape) < 1:
            raise ShapeError(f"input shape must be (channels, height, width), got {input_shape}")
        self.shape = tuple(int(v) for v in input_shape)
        self.layers: list[dict] = []

    def add(self, desc: dict):
        layer = layer_from_descriptor(desc, None)
        try:
            self.shape = layer.output_shape(self.shape)
        except ShapeError as exc:
            raise ShapeError(f"input too small for the layer stack: {exc}") from None
        self.layers.append(desc)

    def conv(self, name, width, kernel=3):
        self.add({"kind": "conv2d", "name": name, "in_channels": self.shape[0], "out_channels": width,
                  "kernel": [kernel, kernel]})

    def dense(self, name, width, init="he"):
        self.add({"kind": "dense", "name": name, "in_features": self.shape[0], "out_features": width,
                  "init": init})

    def simple(self, kind, name, **extra):
        self.add({"kind": kind, "name": name, **extra})

    def head(self, num_classes):
        if num_classes < 1:
            raise ValueError("class count must be >= 1")
        self.dense("head", num_classes, init="small")
        self.simple("softmax", "softmax")


def proposed_cnn_spec(input_shape, num_classes: int, scale: float = 1.0, widths=(8, 16, 32),
                      hidden: int = 64) -> ModelSpec:
    """rescale -> [conv3x3 -> relu -> maxpool2] x 3 -> flatten -> dense -> relu -> dense(K) -> softmax."""
    spec = _SpecWriter(input_shape)
    spec.simple("rescale", "rescale", factor=1 / 255)
    for i, width in enumerate(widths, start=1):
        spec.conv(f"conv{i}", max(1, round(width * scale)))
        spec.simple("relu", f"relu{i}")
        spec.simple("pool", f"pool{i}", mode="max", window=[2, 2], stride=2)
    spec.simple("flatten", "flatten")
    spec.dense("fc1", max(1, round(hidden * scale)))
    spec.simple("relu", "fc1_relu")
    spec.head(num_classes)
    return ModelSpec(spec.layers, tuple(input_shape), num_classes, "proposed",
                     {"scale": scale, "widths": list(widths), "hidden": hidden})


def vgg_style_spec(input_shape, num_classes: int, profile: str | dict = "desk") -> ModelSpec:
    """Stacked 3x3 conv blocks with max pooling between blocks and two hidden dense layers."""
    cfg = VGG_PROFILES[profile] if isinstance(profile, str) else profile
    spec = _SpecWriter(input_shape)
    spec.simple("rescale", "rescale", factor=1 / 255)
    for b, (depth, width) in enumerate(zip(cfg["blocks"], cfg["widths"]), start=1):
        for i in range(1, depth + 1):
            spec.conv(f"block{b}_conv{i}", width)
            spec.simple("relu", f"block{b}_relu{i}")
        spec.simple("pool", f"block{b}_pool", mode="max", window=[2, 2], stride=2)
    spec.simple("flatten", "flatten")
    for i, width in enumerate(cfg["dense"], start=1):
        spec.dense(f"fc{i}", width)
        spec.simple("relu", f"fc{i}_relu")
    spec.head(num_classes)
    return ModelSpec(spec.layers, tuple(input_shape), num_classes, "vgg_style",
                     {"profile": profile if isinstance(profile, str) else dict(cfg)})


def residual_style_spec(input_shape, num_classes: int, blocks: int = 2, stem: int = 8,
                        widths=None) -> ModelSpec:
    """Conv stem, residual blocks, global average pool, dense(K), softmax."""
    widths = list(widths) if widths is not None else [stem * 2 ** i for i in range(blocks)]
    if len(widths) != blocks:
        raise ValueError(f"need {blocks} block widths, got {len(widths)}")
    spec = _SpecWriter(input_shape)
    spec.simple("rescale", "rescale", factor=1 / 255)
    spec.conv("stem_conv", stem)
    spec.simple("relu", "stem_relu")
    spec.simple("pool", "stem_pool", mode="max", window=[2, 2], stride=2)
    for i, width in enumerate(widths, start=1):
        spec.simple("residual", f"res{i}", in_channels=spec.shape[0], out_channels=width)
        spec.simple("relu", f"res{i}_relu")
    _, h, w = spec.shape
    spec.simple("pool", "global_pool", mode="average", window=[h, w], stride=h)
    spec.simple("flatten", "flatten")
    spec.head(num_classes)
    return ModelSpec(spec.layers, tuple(input_shape), num_classes, "residual_style",
                     {"blocks": blocks, "stem": stem, "widths": widths})


BUILDERS = {"proposed": proposed_cnn_spec, "vgg_style": vgg_style_spec, "residual_style": residual_style_spec}


def model_spec(name: str, input_shape, num_classes: int, **options) -> ModelSpec:
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(BUILDERS)}") from None
    return builder(input_shape, num_classes, **options)


def build_proposed_cnn(input_shape, num_classes, scale=1.0, rng=None, **kw) -> Sequential:
    return proposed_cnn_spec(input_shape, num_classes, scale, **kw).build(rng or RngState(0))


def build_vgg_style(input_shape, num_classes, profile="desk", rng=None) -> Sequential:
    return vgg_style_spec(input_shape, num_classes, profile).build(rng or RngState(0))


def build_residual_style(input_shape, num_classes, blocks=2, rng=None, **kw) -> Sequential:
    return residual_style_spec(input_shape, num_classes, blocks, **kw).build(rng or RngState(0))


# ------------------------------------------------------------------ surgery


def replace_head(model: Sequential, num_classes: int, rng: RngState, labels=None) -> Sequential:
    """Copy of ``model`` with a freshly initialised dense(K) + softmax head."""
    if len(model.layers) < 2 or not isinstance(model.layers[-2], Dense) or not isinstance(model.layers[-1], Softmax):
        raise ShapeError("model lacks a dense + softmax head")
    new = model.copy()
    old_head = new.layers[-2]
    new.layers[-2] = Dense(old_head.name, old_head.in_features, num_classes, rng, old_head.init)
    new.meta["num_classes"] = num_classes
    if labels is not None:
        new.meta["labels"] = list(labels)
    else:
        new.meta.pop("labels", None)
    new.check_shapes()
    return new


def freeze_features(model: Sequential, boundary: str) -> Sequential:
    """Freeze every layer up to and including ``boundary`` (in place)."""
    names = [layer.name for layer in model.layers]
    if boundary not in names:
        raise KeyError(f"unknown layer {boundary!r}; layers are {names}")
    for layer in model.layers[:names.index(boundary) + 1]:
        layer.frozen = True
    return model


def backbone_boundary(model: Sequential) -> str:
    """Name of the last layer before the head."""
    return model.layers[-3].name


def model_manifest(model: Sequential) -> str:
    return json.dumps({**model.meta, "layers": model.describe()}, indent=2, sort_keys=True) + "\n"

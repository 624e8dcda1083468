"""Layer pipelines: a sequential model and the residual block."""

from __future__ import annotations

import copy

import numpy as np

from .layers import Conv2D, Dense, Layer, Pad, ReLU, Softmax
from .tensor import RngState, ShapeError


class ResidualBlock(Layer):
    """``x + F(x)`` where F is pad -> conv3x3 -> relu -> pad -> conv3x3.

    The zero padding keeps F shape-preserving, so the skip path needs no
    cropping.  When the channel width changes a 1x1 projection conv
    replaces the identity skip.
    """

    kind = "residual"

    def __init__(self, name: str, in_channels: int, out_channels: int, rng: RngState | None = None):
        super().__init__(name)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.branch = [
            Pad(f"{name}/pad_a"),
            Conv2D(f"{name}/conv_a", in_channels, out_channels, 3, rng),
            ReLU(f"{name}/relu_a"),
            Pad(f"{name}/pad_b"),
            Conv2D(f"{name}/conv_b", out_channels, out_channels, 3, rng),
        ]
        self.projection = (Conv2D(f"{name}/proj", in_channels, out_channels, 1, rng)
                           if in_channels != out_channels else None)

    @property
    def frozen(self):
        return all(layer.frozen for layer in self.sublayers())

    @frozen.setter
    def frozen(self, value):
        # Layer.__init__ assigns before children exist.
        for layer in getattr(self, "branch", []):
            layer.frozen = value
        if getattr(self, "projection", None) is not None:
            self.projection.frozen = value

    def sublayers(self):
        yield from self.branch
        if self.projection is not None:
            yield self.projection

    def forward(self, x):
        out = x
        for layer in self.branch:
            out = layer.forward(out)
        skip = self.projection.forward(x) if self.projection is not None else x
        if skip.shape != out.shape:
            raise ShapeError(f"{self.name}: skip shape {skip.shape} != branch shape {out.shape}")
        return skip + out

    def backward(self, upstream):
        grad = upstream
        for layer in reversed(self.branch):
            grad = layer.backward(grad)
        skip_grad = self.projection.backward(upstream) if self.projection is not None else upstream
        return grad + skip_grad

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.branch:
            shape = layer.output_shape(shape)
        skip = self.projection.output_shape(in_shape) if self.projection is not None else in_shape
        if skip != shape:
            raise ShapeError(f"{self.name}: skip shape {skip} != branch shape {shape}")
        return shape

    def astype(self, dtype):
        for layer in self.sublayers():
            layer.astype(dtype)
        return self

    def zero_grads(self):
        for layer in self.sublayers():
            layer.zero_grads()

    def describe(self):
        return {**super().describe(), "in_channels": self.in_channels, "out_channels": self.out_channels}


class Sequential:
    """Ordered stack of layers ending in a softmax.

    ``forward`` returns class probabilities; ``logits`` stops before the
    softmax so training can use the fused softmax/cross-entropy gradient.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, int, int], meta: dict | None = None):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.meta = dict(meta or {})
        self.check_shapes()

    # -- structure -------------------------------------------------------

    def check_shapes(self) -> list[tuple[int, ...]]:
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ShapeError("model must end in a softmax layer")
        if len(self.layers) < 2 or not isinstance(self.layers[-2], Dense):
            raise ShapeError("model must end in dense -> softmax")
        return shapes

    @property
    def num_classes(self) -> int:
        return self.layers[-2].out_features

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}; layers are {[l.name for l in self.layers]}")

    def leaves(self):
        for layer in self.layers:
            yield from layer.sublayers()

    def parameters(self):
        """Yields ``(layer, key, array)`` for every parameter tensor, in order."""
        for leaf in self.leaves():
            for key, value in leaf.params.items():
                yield leaf, key, value

    def parameter_count(self) -> int:
        return sum(v.size for _, _, v in self.parameters())

    def state(self) -> list[tuple[str, list[np.ndarray]]]:
        return [(leaf.name, list(leaf.params.values())) for leaf in self.leaves() if leaf.params]

    def copy(self) -> Sequential:
        return copy.deepcopy(self)

    def astype(self, dtype) -> Sequential:
        clone = self.copy()
        for layer in clone.layers:
            layer.astype(dtype)
        return clone

    # -- computation -----------------------------------------------------

    def logits(self, x: np.ndarray) -> np.ndarray:
        out = x
        for layer in self.layers[:-1]:
            out = layer.forward(out)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.layers[-1].forward(self.logits(x))

    def backward_from_logits(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        return grad

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Backpropagate a gradient with respect to the output probabilities."""
        return self.backward_from_logits(self.layers[-1].backward(grad))

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        if x.ndim == 3:
            return self.forward(x[None])[0]
        parts = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, self.num_classes), x.dtype)

    def describe(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]

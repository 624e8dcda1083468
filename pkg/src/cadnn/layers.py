"""Layer math: forward and backward for every stage of the network.

The functional ops accept either a single sample (``[C, H, W]`` for spatial
ops, ``[n]`` for dense ops) or a leading batch axis.  Convolution is
*cross-correlation*, valid (no padding), stride 1, so an ``H x W`` input and
an ``f_h x f_w`` kernel give an ``(H - f_h + 1) x (W - f_w + 1)`` map.  Every
kernel in the standard filter bank is symmetric under a 180 degree
rotation, so for those kernels correlation and true convolution coincide.

Layer nodes wrap the functional ops, own their parameters and cache what
the backward pass needs.  A node is single-writer between a forward call
and the matching backward call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, RngState, ShapeError, seeded_uniform

POOL_MODES = ("max", "average", "sum")


def _batched(x: np.ndarray, sample_rank: int):
    if x.ndim == sample_rank:
        return x[None], True
    if x.ndim == sample_rank + 1:
        return x, False
    raise ShapeError(f"expected rank {sample_rank} or {sample_rank + 1}, got shape {x.shape}")


# ---------------------------------------------------------------- convolution


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Valid stride-1 cross-correlation plus per-channel bias.

    Returns ``(output, cache)``.
    """
    xb, single = _batched(x, 3)
    c_out, c_in, fh, fw = weights.shape
    n, c, h, w = xb.shape
    if c != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {c_in}")
    if fh > h or fw > w:
        raise ShapeError(f"conv2d kernel {fh}x{fw} larger than input {h}x{w}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({c_out},)")
    windows = sliding_window_view(xb, (fh, fw), axis=(2, 3))  # n, c, ho, wo, fh, fw
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3]))  # n, ho, wo, c_out
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[:, None, None]
    cache = (xb, weights, single)
    return (out[0] if single else out), cache


def conv2d_backward(upstream: np.ndarray, cache):
    """Returns ``(input_grad, weight_grad, bias_grad)``."""
    xb, weights, single = cache
    gb = upstream[None] if single else upstream
    c_out, c_in, fh, fw = weights.shape
    n, _, h, w = xb.shape
    ho, wo = h - fh + 1, w - fw + 1
    if gb.shape != (n, c_out, ho, wo):
        raise ShapeError(f"conv2d upstream shape {upstream.shape} does not match forward output")
    windows = sliding_window_view(xb, (fh, fw), axis=(2, 3))
    weight_grad = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))  # c_out, c_in, fh, fw
    bias_grad = gb.sum(axis=(0, 2, 3))
    input_grad = np.zeros_like(xb)
    for i in range(fh):
        for j in range(fw):
            # (n, c_out, ho, wo) x (c_out, c_in) -> (n, c_in, ho, wo)
            contrib = np.tensordot(gb, weights[:, :, i, j], axes=([1], [0]))
            input_grad[:, :, i:i + ho, j:j + wo] += contrib.transpose(0, 3, 1, 2)
    if single:
        input_grad = input_grad[0]
    return input_grad, weight_grad.astype(xb.dtype, copy=False), bias_grad


# --------------------------------------------------------------- activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(upstream: np.ndarray, cached_input: np.ndarray) -> np.ndarray:
    if upstream.shape != cached_input.shape:
        raise ShapeError(f"relu upstream {upstream.shape} vs input {cached_input.shape}")
    # Subgradient at exactly 0 is 0.
    return np.where(cached_input > 0, upstream, 0).astype(upstream.dtype, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    z = np.asarray(logits)
    if z.shape[-1] < 1:
        raise ValueError("softmax needs at least one logit")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax received non-finite logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(upstream: np.ndarray, probs: np.ndarray) -> np.ndarray:
    dot = (upstream * probs).sum(axis=-1, keepdims=True)
    return probs * (upstream - dot)


def rescale_forward(x: np.ndarray, factor: float) -> np.ndarray:
    if not factor > 0:
        raise ValueError(f"rescale factor must be positive, got {factor}")
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.dtype(DTYPE)
    return x.astype(dtype, copy=False) * dtype.type(factor)


# ------------------------------------------------------------------- pooling


@dataclass(frozen=True)
class PoolMode:
    mode: str = "max"
    window: tuple[int, int] = (2, 2)
    stride: int | None = None  # defaults to the window height (non-overlapping)

    def __post_init__(self):
        if self.mode not in POOL_MODES:
            raise ValueError(f"unknown pool mode {self.mode!r}; expected one of {POOL_MODES}")
        if min(self.window) < 1 or (self.stride is not None and self.stride < 1):
            raise ValueError("pool window and stride must be >= 1")

    @property
    def step(self) -> int:
        return self.stride if self.stride is not None else self.window[0]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        wh, ww = self.window
        if wh > h or ww > w:
            raise ShapeError(f"pool window {wh}x{ww} exceeds input {h}x{w}")
        s = self.step
        return (h - wh) // s + 1, (w - ww) // s + 1


def pool_forward(x: np.ndarray, mode: PoolMode):
    xb, single = _batched(x, 3)
    n, c, h, w = xb.shape
    ho, wo = mode.output_hw(h, w)
    wh, ww = mode.window
    s = mode.step
    windows = sliding_window_view(xb, (wh, ww), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = windows.reshape(n, c, ho, wo, wh * ww)
    arg = None
    if mode.mode == "max":
        arg = flat.argmax(axis=-1)  # first occurrence: lowest-index tie-break
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    elif mode.mode == "average":
        out = flat.mean(axis=-1, dtype=xb.dtype)
    else:
        out = flat.sum(axis=-1, dtype=xb.dtype)
    cache = (xb.shape, arg, single)
    return (out[0] if single else out), cache


def pool_backward(upstream: np.ndarray, cache, mode: PoolMode) -> np.ndarray:
    in_shape, arg, single = cache
    gb = upstream[None] if single else upstream
    n, c, h, w = in_shape
    ho, wo = mode.output_hw(h, w)
    if gb.shape != (n, c, ho, wo):
        raise ShapeError(f"pool upstream shape {upstream.shape} does not match forward output")
    wh, ww = mode.window
    s = mode.step
    grad = np.zeros(in_shape, dtype=gb.dtype)
    area = gb.dtype.type(wh * ww)
    for a in range(wh):
        for b in range(ww):
            rows = slice(a, a + s * (ho - 1) + 1, s)
            cols = slice(b, b + s * (wo - 1) + 1, s)
            if mode.mode == "max":
                grad[:, :, rows, cols] += np.where(arg == a * ww + b, gb, 0)
            elif mode.mode == "average":
                grad[:, :, rows, cols] += gb / area
            else:
                grad[:, :, rows, cols] += gb
    return grad[0] if single else grad


# --------------------------------------------------------------------- dense


def flatten(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).reshape(-1)


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    m, n = weights.shape
    if x.shape[-1] != n or bias.shape != (m,):
        raise ShapeError(f"dense shapes do not agree: x {x.shape}, W {weights.shape}, b {bias.shape}")
    return x @ weights.T + bias


def dense_backward(upstream: np.ndarray, x: np.ndarray, weights: np.ndarray):
    xb = x[None] if x.ndim == 1 else x
    gb = upstream[None] if upstream.ndim == 1 else upstream
    weight_grad = gb.T @ xb
    bias_grad = gb.sum(axis=0)
    input_grad = gb @ weights
    return (input_grad[0] if x.ndim == 1 else input_grad), weight_grad, bias_grad


# ----------------------------------------------------------------- layer nodes


def he_uniform(shape, fan_in: int, rng: RngState) -> np.ndarray:
    limit = float(np.sqrt(6.0 / fan_in))
    return seeded_uniform(shape, -limit, limit, rng)


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: RngState) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return seeded_uniform(shape, -limit, limit, rng)


def small_uniform(shape, rng: RngState, std: float = 0.01) -> np.ndarray:
    """Uniform with standard deviation ``std``; keeps fresh logits near zero."""
    limit = float(np.sqrt(3.0) * std)
    return seeded_uniform(shape, -limit, limit, rng)


DENSE_INITS = ("he", "glorot", "small")


class Layer:
    """A differentiable pipeline stage.

    ``params`` and ``grads`` are ordered dicts keyed by tensor name.  A
    frozen layer still propagates the input gradient but reports all-zero
    parameter gradients, and optimizers skip it.
    """

    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.frozen = False
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def sublayers(self):
        """Leaf layers in order (a leaf returns itself)."""
        yield self

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _set_grads(self, **grads):
        if self.frozen:
            self.zero_grads()
        else:
            self.grads = grads

    def astype(self, dtype):
        for key in self.params:
            self.params[key] = self.params[key].astype(dtype)
        self.zero_grads()
        return self

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Rescale(Layer):
    kind = "rescale"

    def __init__(self, name: str, factor: float = 1 / 255):
        super().__init__(name)
        if not factor > 0:
            raise ValueError(f"rescale factor must be positive, got {factor}")
        self.factor = factor

    def forward(self, x):
        return rescale_forward(x, self.factor)

    def backward(self, upstream):
        return upstream * upstream.dtype.type(self.factor)

    def describe(self):
        return {**super().describe(), "factor": self.factor}


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, name: str, in_channels: int, out_channels: int, kernel: int | tuple[int, int] = 3,
                 rng: RngState | None = None):
        super().__init__(name)
        fh, fw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if fh < 1 or fw < 1:
            raise ValueError("kernel extents must be >= 1")
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, (fh, fw)
        shape = (out_channels, in_channels, fh, fw)
        fan_in = in_channels * fh * fw
        self.params = {
            "weight": he_uniform(shape, fan_in, rng) if rng is not None else np.zeros(shape, DTYPE),
            "bias": np.zeros(out_channels, DTYPE),
        }
        self.zero_grads()
        self._cache = None

    def forward(self, x):
        out, self._cache = conv2d_forward(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, upstream):
        gx, gw, gb = conv2d_backward(upstream, self._cache)
        self._set_grads(weight=gw, bias=gb)
        return gx

    def output_shape(self, in_shape):
        c, h, w = in_shape
        fh, fw = self.kernel
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expects {self.in_channels} channels, got {c}")
        if fh > h or fw > w:
            raise ShapeError(f"{self.name}: kernel {fh}x{fw} larger than input {h}x{w}")
        return (self.out_channels, h - fh + 1, w - fw + 1)

    def describe(self):
        return {**super().describe(), "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": list(self.kernel)}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._input = x
        return relu(x)

    def backward(self, upstream):
        return relu_backward(upstream, self._input)


class Pad(Layer):
    """Zero padding; only used inside residual blocks to keep shapes fixed."""

    kind = "pad"

    def __init__(self, name: str, amount: int = 1):
        super().__init__(name)
        self.amount = amount

    def forward(self, x):
        p = self.amount
        widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
        return np.pad(x, widths)

    def backward(self, upstream):
        p = self.amount
        return np.ascontiguousarray(upstream[..., p:upstream.shape[-2] - p, p:upstream.shape[-1] - p])

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h + 2 * self.amount, w + 2 * self.amount)

    def describe(self):
        return {**super().describe(), "amount": self.amount}


class Pool(Layer):
    kind = "pool"

    def __init__(self, name: str, mode: PoolMode | None = None):
        super().__init__(name)
        self.mode = mode or PoolMode()

    def forward(self, x):
        out, self._cache = pool_forward(x, self.mode)
        return out

    def backward(self, upstream):
        return pool_backward(upstream, self._cache, self.mode)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        try:
            ho, wo = self.mode.output_hw(h, w)
        except ShapeError as exc:
            raise ShapeError(f"{self.name}: {exc}") from None
        return (c, ho, wo)

    def describe(self):
        return {**super().describe(), "mode": self.mode.mode, "window": list(self.mode.window),
                "stride": self.mode.step}


class Flatten(Layer):
    """Flattens each sample; a leading batch axis is kept."""

    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        if x.ndim == 1:
            return x
        return np.ascontiguousarray(x).reshape(x.shape[0], -1) if x.ndim == 4 else flatten(x)

    def backward(self, upstream):
        return upstream.reshape(self._shape)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name: str, in_features: int, out_features: int, rng: RngState | None = None,
                 init: str = "he"):
        super().__init__(name)
        if init not in DENSE_INITS:
            raise ValueError(f"unknown init {init!r}; expected one of {DENSE_INITS}")
        self.in_features, self.out_features = in_features, out_features
        shape = (out_features, in_features)
        if rng is None:
            weight = np.zeros(shape, DTYPE)
        elif init == "glorot":
            weight = glorot_uniform(shape, in_features, out_features, rng)
        elif init == "small":
            weight = small_uniform(shape, rng)
        else:
            weight = he_uniform(shape, in_features, rng)
        self.init = init
        self.params = {"weight": weight, "bias": np.zeros(out_features, DTYPE)}
        self.zero_grads()

    def forward(self, x):
        self._input = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, upstream):
        gx, gw, gb = dense_backward(upstream, self._input, self.params["weight"])
        self._set_grads(weight=gw, bias=gb)
        return gx

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeError(f"{self.name}: expects ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def describe(self):
        return {**super().describe(), "in_features": self.in_features, "out_features": self.out_features}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        self._probs = softmax(x)
        return self._probs

    def backward(self, upstream):
        return softmax_backward(upstream, self._probs)

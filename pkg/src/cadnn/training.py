"""Loss, optimizers, the epoch loop and the finite-difference gradient check."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import softmax
from .network import Sequential
from .tensor import RngState, ShapeError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# -------------------------------------------------------------------- losses


def _check_label(label: int, k: int):
    if not 0 <= int(label) < k:
        raise ValueError(f"label {label} out of range for {k} classes")


def sparse_ce_loss(probs: np.ndarray, label: int) -> float:
    probs = np.asarray(probs)
    _check_label(label, probs.shape[-1])
    return float(-math.log(max(float(probs[int(label)]), PROB_FLOOR)))


def sparse_ce_softmax_grad(logits: np.ndarray, label: int) -> np.ndarray:
    """Gradient of ``-ln softmax(logits)[label]`` with respect to the logits."""
    logits = np.asarray(logits)
    _check_label(label, logits.shape[-1])
    grad = softmax(logits)
    grad[int(label)] -= 1
    return grad


def batch_ce(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample losses in float64."""
    picked = probs[np.arange(len(labels)), labels].astype(np.float64)
    return -np.log(np.maximum(picked, PROB_FLOOR))


# ---------------------------------------------------------------- optimizers


def sgd_step(param: np.ndarray, grad: np.ndarray, learning_rate: float) -> np.ndarray:
    if param.shape != grad.shape:
        raise ShapeError(f"param {param.shape} and grad {grad.shape} differ")
    if not learning_rate > 0:
        raise ValueError("learning_rate must be positive")
    return param - param.dtype.type(learning_rate) * grad


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def fresh(cls, like: np.ndarray, **hyper) -> AdamState:
        return cls(m=np.zeros_like(like), v=np.zeros_like(like), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new parameter and state."""
    if state.m is None or state.v is None:
        raise ValueError("Adam state is uninitialized; use AdamState.fresh")
    if not (param.shape == grad.shape == state.m.shape == state.v.shape):
        raise ShapeError(f"Adam shape mismatch: param {param.shape}, grad {grad.shape}, moments {state.m.shape}")
    t = state.step_count + 1
    f = param.dtype.type
    m = f(state.beta1) * state.m + f(1 - state.beta1) * grad
    v = f(state.beta2) * state.v + f(1 - state.beta2) * grad * grad
    m_hat = m / f(1 - state.beta1 ** t)
    v_hat = v / f(1 - state.beta2 ** t)
    new = param - f(state.learning_rate) * m_hat / (np.sqrt(v_hat) + f(state.epsilon))
    return new, AdamState(state.learning_rate, state.beta1, state.beta2, state.epsilon, t, m, v)


class SGD:
    def __init__(self, learning_rate: float = 1e-2):
        self.learning_rate = learning_rate

    def step(self, model: Sequential):
        for leaf, key, value in model.parameters():
            if leaf.frozen:
                continue
            value[...] = sgd_step(value, leaf.grads[key], self.learning_rate)


class Adam:
    """Adam over a model's trainable tensors; state is keyed by (layer, tensor)."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.hyper = dict(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
        self.states: dict[tuple[str, str], AdamState] = {}

    def step(self, model: Sequential):
        for leaf, key, value in model.parameters():
            if leaf.frozen:
                continue
            state = self.states.get((leaf.name, key)) or AdamState.fresh(value, **self.hyper)
            new, self.states[(leaf.name, key)] = adam_step(value, leaf.grads[key], state)
            value[...] = new


def make_optimizer(name: str, learning_rate: float):
    if name == "adam":
        return Adam(learning_rate)
    if name == "sgd":
        return SGD(learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")


# ------------------------------------------------------------------- reports

REPORT_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float | None
    val_acc: float | None
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def column(self, name: str) -> list:
        return [getattr(row, name) for row in self.epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.epochs:
            writer.writerow(["" if v is None else repr(v) for v in asdict(row).values()])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([asdict(row) for row in self.epochs], indent=2) + "\n"


# ------------------------------------------------------------------ training


def _replicas(model: Sequential, count: int) -> list[Sequential]:
    # Replicas share parameter arrays with the master; only caches are private.
    replicas = []
    for _ in range(count):
        memo = {id(value): value for _, _, value in model.parameters()}
        replicas.append(copy.deepcopy(model, memo))
    return replicas


def _batch_gradients(model: Sequential, xb: np.ndarray, yb: np.ndarray, scale: float):
    logits = model.logits(xb)
    probs = softmax(logits)
    grad = probs.copy()
    grad[np.arange(len(yb)), yb] -= 1
    model.backward_from_logits(grad * probs.dtype.type(scale))
    return probs


def _evaluate_loss(model: Sequential, x: np.ndarray, y: np.ndarray, batch_size: int):
    probs = model.predict_proba(x, batch_size)
    return float(batch_ce(probs, y).mean()), float(np.mean(probs.argmax(axis=1) == y))


def fit(model: Sequential, train, val, config, rng: RngState, timer=time.perf_counter) -> TrainReport:
    """Mini-batch training; ``train`` and ``val`` are ``(x, y)`` array pairs.

    ``config`` needs ``epochs``, ``batch_size``, ``learning_rate`` and
    ``optimizer``; ``parallel`` (worker count, 0/1 = serial) and
    ``record_timing`` are optional.  The final partial batch is kept and
    gradients are averaged over each batch.
    """
    x, y = train
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("training set is empty")
    k = model.num_classes
    for labels in (y, None if val is None else np.asarray(val[1])):
        if labels is not None and len(labels) and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels out of range for a {k}-class model")
    epochs, batch_size = int(config.epochs), int(config.batch_size)
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    workers = int(getattr(config, "parallel", 0) or 0)
    record_timing = bool(getattr(config, "record_timing", True))
    replicas = _replicas(model, workers) if workers > 1 else []
    pool = ThreadPoolExecutor(workers) if replicas else None

    report = TrainReport()
    try:
        for epoch in range(1, epochs + 1):
            start = timer()
            order = rng.permutation(len(x))
            loss_sum, correct = 0.0, 0
            for lo in range(0, len(x), batch_size):
                idx = order[lo:lo + batch_size]
                xb, yb = x[idx], y[idx]
                scale = 1.0 / len(idx)
                if pool is None:
                    probs = _batch_gradients(model, xb, yb, scale)
                else:
                    probs = _parallel_gradients(pool, model, replicas, xb, yb, scale)
                loss_sum += float(batch_ce(probs, yb).sum())
                correct += int(np.sum(probs.argmax(axis=1) == yb))
                optimizer.step(model)
            val_loss = val_acc = None
            if val is not None and len(val[0]):
                val_loss, val_acc = _evaluate_loss(model, val[0], np.asarray(val[1], np.int64), batch_size)
            seconds = float(timer() - start) if record_timing else 0.0
            report.epochs.append(EpochRecord(epoch, loss_sum / len(x), correct / len(x), val_loss, val_acc, seconds))
            log.info("epoch %d loss %.4f acc %.3f val_acc %s", epoch, loss_sum / len(x), correct / len(x), val_acc)
    finally:
        if pool is not None:
            pool.shutdown()
    return report


def _parallel_gradients(pool, model, replicas, xb, yb, scale):
    shards = np.array_split(np.arange(len(xb)), len(replicas))
    jobs = [pool.submit(_batch_gradients, rep, xb[s], yb[s], scale)
            for rep, s in zip(replicas, shards) if len(s)]
    probs = np.concatenate([job.result() for job in jobs])
    used = [rep for rep, s in zip(replicas, shards) if len(s)]
    # Reduce in shard order so the sum is reproducible.
    for leaf_index, leaf in enumerate(model.leaves()):
        rep_leaves = [list(rep.leaves())[leaf_index] for rep in used]
        leaf.grads = {key: sum((r.grads[key] for r in rep_leaves[1:]), rep_leaves[0].grads[key].copy())
                      for key in leaf.params}
    return probs


# ------------------------------------------------------ finite-difference check


# 80-bit on x86-64 Linux; numpy falls back to float64 where it is not available.
PROBE_DTYPE = np.longdouble


def _loss(model: Sequential, x: np.ndarray, label: int) -> float:
    probs = model.forward(x[None])[0]
    # Stay in the probe's dtype: a float64 log would cap the precision.
    return -np.log(np.maximum(probs[label], probs.dtype.type(PROB_FLOOR)))


def gradient_errors(model: Sequential, x: np.ndarray, label: int, h: float | None = None,
                    dtype=np.float32) -> dict[str, float]:
    """Worst relative error per tensor between analytic and central-difference gradients.

    The check runs on a copy cast to ``dtype``; the caller's model is not
    touched.  Relative error is ``|a - b| / max(|a|, |b|, 1e-8)``.  Frozen
    layers must report exactly zero analytic gradient and are otherwise
    skipped, since no optimizer will ever move them.
    """
    dtype = np.dtype(dtype)
    if h is None:
        h = 1e-3 if dtype == np.float32 else 1e-5
    if not h > 0:
        raise ValueError("h must be positive")
    model = model.astype(dtype)
    x = np.array(x, dtype=dtype)
    _check_label(label, model.num_classes)
    # The numeric side runs on an extended-precision twin.  Float32 loss
    # rounding alone is ~3e-5 per difference quotient, and float64 rounding
    # still swamps gradient elements near 1e-7.
    probe = model.astype(PROBE_DTYPE)
    probe_x = x.astype(PROBE_DTYPE)

    probs = model.forward(x[None])[0]
    p = float(probs[label])
    if not math.isfinite(p):
        raise ValueError("non-finite loss")
    upstream = np.zeros((1, model.num_classes), dtype)
    if p > PROB_FLOOR:
        upstream[0, label] = -1.0 / p
    input_grad = model.backward(upstream)[0]

    def worst(analytic, target):
        numeric = np.empty(target.size, PROBE_DTYPE)
        flat = target.reshape(-1)
        step = PROBE_DTYPE(h)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = _loss(probe, probe_x, label)
            flat[i] = keep - step
            down = _loss(probe, probe_x, label)
            flat[i] = keep
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ValueError("non-finite loss")
            numeric[i] = (up - down) / (2 * step)
        a = analytic.reshape(-1).astype(PROBE_DTYPE)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0

    errors = {}
    for (leaf, key, _), (_, _, value) in zip(model.parameters(), probe.parameters()):
        name = f"{leaf.name}.{key}"
        if leaf.frozen:
            errors[name] = 0.0 if not np.any(leaf.grads[key]) else math.inf
            continue
        errors[name] = worst(leaf.grads[key], value)
    errors["input"] = worst(input_grad, probe_x)
    return errors


def finite_diff_check(model: Sequential, x: np.ndarray, label: int, h: float | None = None,
                      dtype=np.float32) -> float:
    return max(gradient_errors(model, x, label, h, dtype).values())

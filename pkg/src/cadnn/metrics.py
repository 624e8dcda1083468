"""Confusion matrices and the five performance measures.

Rows of a confusion matrix are actual classes, columns are predictions.
Ratios with a zero denominator are *undefined* and surface as ``None``
(``null`` in JSON); they are skipped when averaging.  Multiclass reports
use macro one-vs-rest averaging: each class in turn is the positive class.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

MEASURES = ("accuracy", "sensitivity", "specificity", "precision", "f_measure")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    labels: list[str] | None = None

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.counts.shape != self.counts.shape:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts, self.labels)

    def render(self) -> str:
        names = self.labels or [str(i) for i in range(self.k)]
        head = ["actual\\predicted"] + names
        rows = [[names[i]] + [str(int(v)) for v in self.counts[i]] for i in range(self.k)]
        widths = [max(len(r[c]) for r in [head] + rows) for c in range(len(head))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [head] + rows]
        return "\n".join(lines) + "\n"


def confusion_matrix(predicted, actual, k: int, labels=None) -> ConfusionMatrix:
    predicted = np.asarray(predicted, dtype=np.int64).reshape(-1)
    actual = np.asarray(actual, dtype=np.int64).reshape(-1)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.size} predictions, {actual.size} labels")
    for arr in (predicted, actual):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"class index out of range for k={k}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (actual, predicted), 1)
    return ConfusionMatrix(counts, list(labels) if labels is not None else None)


def _ratio(num, den):
    return None if den == 0 else Fraction(num) / den


def _rates(tp, fn, fp, tn) -> dict:
    """Exact rational arithmetic, rounded once to float at the end."""
    precision = _ratio(tp, tp + fp)
    sensitivity = _ratio(tp, tp + fn)
    if precision is None or sensitivity is None:
        f_measure = None
    else:
        f_measure = _ratio(2 * precision * sensitivity, precision + sensitivity)
    rates = {
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "sensitivity": sensitivity,
        "specificity": _ratio(tn, tn + fp),
        "precision": precision,
        "f_measure": f_measure,
    }
    return {k: None if v is None else float(v) for k, v in rates.items()}


@dataclass
class MetricsReport:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f_measure: float | None
    averaging: str = "binary"
    per_class: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("scope",) + MEASURES)
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        writer.writerow([self.averaging] + [fmt(getattr(self, m)) for m in MEASURES])
        for row in self.per_class:
            writer.writerow([row["class"]] + [fmt(row[m]) for m in MEASURES])
        return buf.getvalue()

    def summary(self) -> str:
        fmt = lambda v: "undefined" if v is None else f"{v:.4f}"  # noqa: E731
        return "\n".join(f"{m:<12}{fmt(getattr(self, m))}" for m in MEASURES) + "\n"


def _one_vs_rest(counts: np.ndarray, positive: int):
    tp = int(counts[positive, positive])
    fn = int(counts[positive].sum()) - tp
    fp = int(counts[:, positive].sum()) - tp
    tn = int(counts.sum()) - tp - fn - fp
    return tp, fn, fp, tn


def _class_name(cm: ConfusionMatrix, i: int) -> str:
    return cm.labels[i] if cm.labels else str(i)


def binary_metrics(cm: ConfusionMatrix, positive: int = 1) -> MetricsReport:
    """Accuracy, sensitivity, specificity, precision and F-measure for K=2."""
    if cm.k != 2:
        raise ValueError(f"binary metrics need a 2x2 matrix, got k={cm.k}")
    if positive not in (0, 1):
        raise ValueError("positive class index must be 0 or 1")
    rates = _rates(*_one_vs_rest(cm.counts, positive))
    per_class = [{"class": _class_name(cm, i), **_rates(*_one_vs_rest(cm.counts, i))} for i in range(2)]
    return MetricsReport(**rates, averaging=f"binary(positive={_class_name(cm, positive)})", per_class=per_class)


def macro_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.k < 2:
        raise ValueError("macro metrics need k >= 2")
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    per_class = [{"class": _class_name(cm, i), **_rates(*_one_vs_rest(cm.counts, i))} for i in range(cm.k)]
    agg = {}
    for m in MEASURES[1:]:
        values = [row[m] for row in per_class if row[m] is not None]
        agg[m] = sum(values) / len(values) if values else None
    accuracy = int(np.trace(cm.counts)) / cm.total
    return MetricsReport(accuracy, **agg, averaging="macro-one-vs-rest", per_class=per_class)


def default_positive(labels) -> int:
    """Binary positive class: ``Demented`` when present, else index 1."""
    if labels is not None and "Demented" in labels:
        return list(labels).index("Demented")
    return 1


def evaluate(model, x: np.ndarray, y: np.ndarray, labels=None, batch_size: int = 256, positive=None):
    """Predict with ``argmax`` of the softmax output and score against ``y``."""
    k = model.num_classes
    if labels is not None and len(labels) != k:
        raise ValueError(f"model outputs {k} classes, dataset has {len(labels)}")
    probs = model.predict_proba(x, batch_size)
    predicted = probs.argmax(axis=1) if len(probs) else np.zeros(0, np.int64)
    cm = confusion_matrix(predicted, y, k, labels)
    if cm.total == 0:
        return cm, MetricsReport(None, None, None, None, None, averaging="empty")
    report = binary_metrics(cm, default_positive(labels) if positive is None else positive) if k == 2 else macro_metrics(cm)
    return cm, report

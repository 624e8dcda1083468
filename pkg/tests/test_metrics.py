import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cadnn.layers import Dense, Flatten, Softmax
from cadnn.metrics import (ConfusionMatrix, binary_metrics, confusion_matrix, default_positive, evaluate,
                           macro_metrics)
from cadnn.network import Sequential
from cadnn.tensor import RngState


def cm2(tp, fn, fp, tn):
    # Positive class is index 1: row 1 = actual positive.
    return ConfusionMatrix(np.array([[tn, fp], [fn, tp]]))


def brute_force(pred, actual, positive):
    """Independent tally straight from the definitions, in exact fractions."""
    tp = fn = fp = tn = 0
    for p, a in zip(pred, actual):
        if a == positive:
            tp += p == positive
            fn += p != positive
        else:
            fp += p == positive
            tn += p != positive

    def frac(n, d):
        return None if d == 0 else Fraction(n, d)

    prec, rec = frac(tp, tp + fp), frac(tp, tp + fn)
    f = None if prec is None or rec is None or prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return {"accuracy": frac(tp + tn, len(pred)), "sensitivity": rec, "specificity": frac(tn, tn + fp),
            "precision": prec, "f_measure": f}


def as_float(d):
    return {k: None if v is None else float(v) for k, v in d.items()}


def test_confusion_matrix_examples():
    assert confusion_matrix([0, 1, 1, 0], [0, 1, 0, 0], 2).counts.tolist() == [[2, 1], [0, 1]]
    assert confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3).counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]
    assert confusion_matrix([], [], 3).counts.tolist() == [[0] * 3] * 3
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([2], [0], 2)


def test_binary_fixture():
    r = binary_metrics(cm2(40, 10, 5, 45))
    assert abs(r.accuracy - 0.85) <= 1e-9
    assert abs(r.sensitivity - 0.8) <= 1e-9
    assert abs(r.specificity - 0.9) <= 1e-9
    assert abs(r.precision - 8 / 9) <= 1e-9
    assert abs(r.f_measure - 0.8421052631578947) <= 1e-9  # 16/19


def test_binary_symmetric():
    r = binary_metrics(cm2(25, 25, 25, 25))
    assert [r.accuracy, r.sensitivity, r.specificity, r.precision, r.f_measure] == [0.5] * 5


def test_binary_perfect_positive_only():
    r = binary_metrics(cm2(7, 0, 0, 0))
    assert r.accuracy == r.sensitivity == r.precision == r.f_measure == 1.0
    assert r.specificity is None
    assert json.loads(r.to_json())["specificity"] is None


def test_binary_no_true_positives():
    r = binary_metrics(cm2(0, 3, 4, 5))
    assert r.precision == 0.0 and r.sensitivity == 0.0 and r.f_measure is None


def test_binary_matches_brute_force_exactly():
    rng = RngState(2024)
    pred = rng.integers(0, 2, 1000)
    actual = rng.integers(0, 2, 1000)
    for positive in (0, 1):
        r = binary_metrics(confusion_matrix(pred, actual, 2), positive)
        want = brute_force(pred.tolist(), actual.tolist(), positive)
        got = {k: r.to_dict()[k] for k in want}
        assert got == as_float(want)
        for k, v in want.items():
            assert Fraction(got[k]) == Fraction(float(v))


def test_macro_matches_one_vs_rest_tally():
    rng = RngState(77)
    pred = rng.integers(0, 4, 1000).tolist()
    actual = rng.integers(0, 4, 1000).tolist()
    r = macro_metrics(confusion_matrix(pred, actual, 4))
    per = [brute_force(pred, actual, c) for c in range(4)]
    for i, row in enumerate(r.per_class):
        assert {k: row[k] for k in per[i]} == as_float(per[i])
    for m in ("sensitivity", "specificity", "precision", "f_measure"):
        assert r.to_dict()[m] == pytest.approx(float(sum(p[m] for p in per) / 4), abs=1e-15)
    assert r.accuracy == float(Fraction(sum(p == a for p, a in zip(pred, actual)), 1000))


def test_macro_diagonal():
    r = macro_metrics(ConfusionMatrix(np.diag([3, 4, 5])))
    assert [r.accuracy, r.sensitivity, r.specificity, r.precision, r.f_measure] == [1.0] * 5


def test_macro_k2_accuracy_equals_binary():
    cm = cm2(12, 3, 7, 9)
    assert macro_metrics(cm).accuracy == binary_metrics(cm).accuracy


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_metric_properties(tp, fn, fp, tn):
    if tp + fn + fp + tn == 0:
        return
    r = binary_metrics(cm2(tp, fn, fp, tn))
    for v in (r.accuracy, r.sensitivity, r.specificity, r.precision, r.f_measure):
        assert v is None or 0 <= v <= 1
    if r.f_measure is not None:
        assert min(r.precision, r.sensitivity) - 1e-12 <= r.f_measure <= max(r.precision, r.sensitivity) + 1e-12
    # Swapping the positive class swaps sensitivity and specificity.
    swapped = binary_metrics(cm2(tp, fn, fp, tn), positive=0)
    assert swapped.sensitivity == r.specificity and swapped.specificity == r.sensitivity
    assert swapped.accuracy == r.accuracy


def test_reports_render():
    cm = ConfusionMatrix(np.array([[5, 1], [2, 12]]), ["Demented", "NonDemented"])
    text = cm.render()
    assert "Demented" in text.splitlines()[0] and text.splitlines()[2].split()[-1] == "12"
    r = binary_metrics(cm, default_positive(cm.labels))
    assert r.averaging == "binary(positive=Demented)"
    assert r.to_csv().splitlines()[0] == "scope,accuracy,sensitivity,specificity,precision,f_measure"
    assert "undefined" not in r.summary()
    assert default_positive(["a", "b"]) == 1


def constant_model(k=2, winner=0):
    head = Dense("head", 4, k)
    head.params["bias"][winner] = 5.0
    return Sequential([Flatten("flatten"), head, Softmax("softmax")], (1, 2, 2))


def test_evaluate_constant_classifier():
    x = np.zeros((10, 1, 2, 2), np.float32)
    y = np.array([0, 1] * 5)
    cm, r = evaluate(constant_model(), x, y)
    assert r.accuracy == 0.5 and cm.counts.tolist() == [[5, 0], [5, 0]]
    cm2_, r2 = evaluate(constant_model(), x, y)
    assert r2.to_json() == r.to_json()


def test_evaluate_label_mismatch():
    with pytest.raises(ValueError):
        evaluate(constant_model(), np.zeros((1, 1, 2, 2), np.float32), np.array([0]), labels=["a", "b", "c"])


def test_evaluate_multiclass_is_macro():
    x = np.zeros((4, 1, 2, 2), np.float32)
    _, r = evaluate(constant_model(4, 2), x, np.array([0, 1, 2, 3]))
    assert r.averaging == "macro-one-vs-rest" and r.accuracy == 0.25

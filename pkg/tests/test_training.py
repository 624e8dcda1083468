import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cadnn.archive import save_weights
from cadnn.config import ExperimentConfig
from cadnn.layers import Dense, Flatten, Softmax
from cadnn.network import Sequential
from cadnn.synthetic import two_class_textures
from cadnn.tensor import RngState
from cadnn.training import (AdamState, adam_step, fit, finite_diff_check, gradient_errors, sgd_step,
                            sparse_ce_loss, sparse_ce_softmax_grad)
from cadnn.zoo import build_proposed_cnn, freeze_features

from gradcases import cases


def cfg(**kw):
    base = dict(epochs=3, batch_size=8, learning_rate=1e-3, optimizer="adam")
    return ExperimentConfig(**{**base, **kw})


def test_loss_examples():
    assert sparse_ce_loss(np.array([0.0, 1.0, 0.0]), 1) == 0.0
    for label in range(4):
        assert sparse_ce_loss(np.full(4, 0.25), label) == pytest.approx(math.log(4), abs=1e-12)
    assert sparse_ce_loss(np.array([0.25, 0.75]), 1) == pytest.approx(0.28768207, abs=1e-8)
    assert math.isfinite(sparse_ce_loss(np.array([1.0, 0.0]), 1))
    with pytest.raises(ValueError):
        sparse_ce_loss(np.array([0.5, 0.5]), 2)


def test_fused_gradient_examples():
    np.testing.assert_allclose(sparse_ce_softmax_grad(np.zeros(2), 0), [-0.5, 0.5])
    assert np.abs(sparse_ce_softmax_grad(np.array([30.0, 0.0, 0.0]), 0)).max() < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-30, 30)), st.data())
def test_fused_gradient_sums_to_zero(z, data):
    label = data.draw(st.integers(0, len(z) - 1))
    assert abs(sparse_ce_softmax_grad(z, label).sum()) <= 1e-6


def test_sgd_step():
    assert sgd_step(np.array([1.0]), np.array([0.5]), 0.1)[0] == pytest.approx(0.95)
    theta = np.array([1.0, -2.0])
    np.testing.assert_array_equal(sgd_step(theta, np.zeros(2), 0.1), theta)
    with pytest.raises(ValueError):
        sgd_step(theta, theta, 0)


def reference_adam(theta, g, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_adam_zero_gradient_fixed_point():
    theta = np.array([0.3, -1.0])
    new, state = adam_step(theta, np.zeros(2), AdamState.fresh(theta))
    np.testing.assert_array_equal(new, theta)
    assert state.step_count == 1


@pytest.mark.parametrize("g", [1e-3, -0.02, 0.5, -7.0, 300.0])
def test_adam_first_step_is_sign(g):
    theta = np.array([1.0])
    new, _ = adam_step(theta, np.array([g]), AdamState.fresh(theta))
    assert abs((new[0] - 1.0) - (-1e-3 * math.copysign(1, g))) <= 1e-3 * 1e-4


@pytest.mark.parametrize("g", [0.7, -0.05])
def test_adam_five_steps_match_reference(g):
    theta, state = np.array([2.0]), AdamState.fresh(np.array([2.0]))
    for _ in range(5):
        theta, state = adam_step(theta, np.array([g]), state)
    assert theta[0] == pytest.approx(reference_adam(2.0, g, 5), abs=1e-12)


def test_adam_requires_fresh_state():
    with pytest.raises(ValueError):
        adam_step(np.ones(1), np.ones(1), AdamState())


def small_dense(seed=0):
    rng = RngState(seed)
    return Sequential([Flatten("flatten"), Dense("head", 8, 3, rng), Softmax("softmax")], (2, 2, 2))


def test_finite_diff_dense_only():
    x = RngState(1).uniform(-1, 1, (2, 2, 2))
    assert finite_diff_check(small_dense(1), x, 2) <= 1e-3


def test_finite_diff_conv_relu_pool_dense():
    name, model, x, label = next(c for c in cases() if c[0] == "composed_18")
    assert model.input_shape[1] == 6
    assert finite_diff_check(model, x, label) <= 1e-3


def test_finite_diff_frozen_layer_reports_zero():
    _, model, x, label = next(c for c in cases() if c[0] == "composed_deep")
    model.layer("conv1").frozen = True
    errors = gradient_errors(model, x, label)
    assert errors["conv1.weight"] == 0.0 and errors["conv1.bias"] == 0.0
    assert max(errors.values()) <= 1e-3


def test_finite_diff_rejects_bad_h():
    with pytest.raises(ValueError):
        finite_diff_check(small_dense(), np.zeros((2, 2, 2)), 0, h=0)


def test_finite_diff_does_not_mutate_model():
    model = small_dense(3)
    before = save_weights(model)
    finite_diff_check(model, np.ones((2, 2, 2)), 1)
    assert save_weights(model) == before


def toy_data(n=32, size=32, seed=0):
    ds = two_class_textures(n // 2, size=size, seed=seed)
    return ds.to_arrays()


def test_fit_zero_epochs_is_noop():
    model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    before = save_weights(model)
    report = fit(model, toy_data(), None, cfg(epochs=0), RngState(1))
    assert len(report) == 0 and save_weights(model) == before


def test_fit_deterministic():
    data = toy_data()
    blobs = []
    for _ in range(2):
        model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
        report = fit(model, data, data, cfg(record_timing=False), RngState(7))
        blobs.append((save_weights(model), report.to_csv()))
    assert blobs[0] == blobs[1]


def test_fit_parallel_matches_serial_closely():
    data = toy_data()
    serial = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    fit(serial, data, None, cfg(), RngState(3))
    par = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    fit(par, data, None, cfg(parallel=3), RngState(3))
    for (_, _, a), (_, _, b) in zip(serial.parameters(), par.parameters()):
        np.testing.assert_allclose(a, b, atol=1e-5)


def test_fit_parallel_is_reproducible():
    data = toy_data()
    runs = []
    for _ in range(2):
        model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
        fit(model, data, None, cfg(parallel=2), RngState(3))
        runs.append(save_weights(model))
    assert runs[0] == runs[1]


def test_fresh_model_loss_near_uniform():
    x, y = toy_data(64)
    for seed in range(3):
        model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(seed))
        probs = model.predict_proba(x)
        loss = float(np.mean([sparse_ce_loss(p, t) for p, t in zip(probs, y)]))
        assert abs(loss - math.log(2)) <= 0.15 * math.log(2)


def test_training_loss_trends_down():
    model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    report = fit(model, toy_data(), None, cfg(epochs=12), RngState(2))
    losses = report.column("train_loss")
    assert np.mean(losses[-3:]) < np.mean(losses[:3])


def test_frozen_backbone_untouched_by_fit():
    model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    freeze_features(model, "fc1_relu")
    before = [v.copy() for leaf, _, v in model.parameters() if leaf.name != "head"]
    head = model.layer("head").params["weight"].copy()
    fit(model, toy_data(), None, cfg(), RngState(1))
    after = [v for leaf, _, v in model.parameters() if leaf.name != "head"]
    assert all(a.tobytes() == b.tobytes() for a, b in zip(before, after))
    assert not np.array_equal(head, model.layer("head").params["weight"])


def test_freeze_everything_changes_nothing():
    model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    freeze_features(model, "softmax")
    before = save_weights(model)
    report = fit(model, toy_data(), None, cfg(), RngState(1))
    assert save_weights(model) == before
    losses = report.column("train_loss")
    assert max(losses) - min(losses) < 1e-6


def test_sgd_training_runs():
    model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    report = fit(model, toy_data(), None, cfg(optimizer="sgd", learning_rate=0.05), RngState(1))
    assert all(math.isfinite(v) for v in report.column("train_loss"))


def test_fit_rejects_out_of_range_labels():
    x, y = toy_data()
    with pytest.raises(ValueError):
        fit(build_proposed_cnn((1, 32, 32), 2), (x, y + 5), None, cfg(), RngState(0))


def test_report_csv_columns():
    model = build_proposed_cnn((1, 32, 32), 2, rng=RngState(0))
    data = toy_data()
    report = fit(model, data, data, cfg(epochs=2, record_timing=False), RngState(1))
    lines = report.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc,seconds"
    assert len(lines) == 3 and lines[1].endswith(",0.0")

import math

import numpy as np
import pytest

from kclstm.errors import DimensionError, DivergenceError
from kclstm.lstm_core import (
    GATES,
    LstmParameters,
    LstmState,
    Scaler,
    TrainConfig,
    WindowSet,
    bptt_gradients,
    cell_forward,
    forecast,
    forward_batch,
    forward_sequence,
    init_parameters,
    load_model,
    save_model,
    sigmoid,
    train,
    train_values,
    window_loss,
)


def numeric_grad(p, window, eps=1e-6):
    theta = p.flat()
    d, m = p.hidden_size, p.input_size
    out = np.empty_like(theta)
    for k in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[k] += eps
        dn[k] -= eps
        lp = window_loss(LstmParameters.from_flat(up, d, m), window)
        lm = window_loss(LstmParameters.from_flat(dn, d, m), window)
        out[k] = (lp - lm) / (2 * eps)
    return out


def rel_err(g, n):
    return np.max(np.abs(g - n) / np.maximum(np.maximum(np.abs(g), np.abs(n)), 1e-6))


@pytest.mark.parametrize("seed", range(5))
def test_bptt_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d, L = int(rng.integers(1, 5)), int(rng.integers(1, 7))
    p = init_parameters(seed, d, 1)
    # random biases so no gate sits at a symmetric point
    p = LstmParameters(p.W, p.V, rng.normal(0, 0.5, p.b.shape), p.w_out, 0.3)
    window = (rng.uniform(-1, 1, L), float(rng.uniform(-1, 1)))
    g = bptt_gradients(p, window).flat()
    # a wider step keeps float64 rounding out of the difference quotient
    assert rel_err(g, numeric_grad(p, window, eps=1e-4)) <= 1e-5


def test_bptt_multivariate_input():
    rng = np.random.default_rng(9)
    p = init_parameters(9, 3, 2)
    window = (rng.normal(size=(4, 2)), 0.7)
    g = bptt_gradients(p, window).flat()
    assert rel_err(g, numeric_grad(p, window, eps=1e-4)) <= 1e-5


def test_batched_loss_is_mean_of_window_losses():
    rng = np.random.default_rng(0)
    p = init_parameters(0, 4, 1)
    X = rng.uniform(size=(5, 6))
    y = rng.uniform(size=5)
    pred, _, _ = forward_batch(p, X)
    per = [window_loss(p, (X[k], y[k])) for k in range(5)]
    assert np.mean((pred - y) ** 2) == pytest.approx(np.mean(per), rel=1e-13)


def test_cell_forward_matches_hand_computation():
    d = 2
    p = init_parameters(5, d, 1)
    prev = LstmState(C=np.array([0.1, -0.2]), h=np.array([0.3, 0.05]))
    x = np.array([0.4])
    gate = {}
    for k, name in enumerate(GATES):
        a = p.W[k] @ prev.h + p.V[k] @ x + p.b[k]
        gate[name] = np.tanh(a) if name == "c" else 1 / (1 + np.exp(-a))
    C = gate["i"] * gate["c"] + gate["f"] * prev.C
    h = gate["o"] * np.tanh(C)
    out = cell_forward(p, x, prev)
    np.testing.assert_allclose(out.C, C, rtol=1e-14)
    np.testing.assert_allclose(out.h, h, rtol=1e-14)


def test_sequence_and_batch_agree():
    p = init_parameters(2, 3, 1)
    xs = [0.1, 0.5, -0.2, 0.9]
    states, pred = forward_sequence(p, xs)
    bp, bh, _ = forward_batch(p, np.array([xs]))
    np.testing.assert_allclose(states[-1].h, bh[0], rtol=1e-14)
    assert pred == pytest.approx(bp[0], rel=1e-14)


def test_zero_input_fixed_point():
    p = LstmParameters.zeros(3, 1)
    out = cell_forward(p, [0.0], LstmState.zeros(3))
    # all gates 0.5, candidate 0, so the state stays at zero
    np.testing.assert_array_equal(out.C, 0.0)
    np.testing.assert_array_equal(out.h, 0.0)


def test_init_forget_bias_and_range():
    p = init_parameters(0, 16, 1)
    np.testing.assert_array_equal(p.gate("f")[2], 1.0)
    for name in ("i", "o", "c"):
        np.testing.assert_array_equal(p.gate(name)[2], 0.0)
    assert np.all(np.abs(p.W) <= 0.25) and np.all(np.abs(p.V) <= 0.25)


def test_sigmoid_stable():
    x = np.array([-800.0, 0.0, 800.0])
    with np.errstate(all="raise"):
        np.testing.assert_allclose(sigmoid(x), [0.0, 0.5, 1.0])


def test_dimension_errors():
    p = init_parameters(0, 3, 1)
    with pytest.raises(DimensionError):
        cell_forward(p, [1.0, 2.0], LstmState.zeros(3))
    with pytest.raises(DimensionError):
        cell_forward(p, [1.0], LstmState.zeros(2))
    with pytest.raises(DimensionError):
        forward_batch(p, np.zeros((2, 3, 2)))


def test_flat_roundtrip():
    p = init_parameters(1, 4, 2)
    q = LstmParameters.from_flat(p.flat(), 4, 2)
    assert p.equals(q)
    assert p.flat().size == 4 * 4 * 4 + 4 * 4 * 2 + 4 * 4 + 4 + 1


def test_scaler_and_windows():
    v = np.array([2.0, 4.0, 6.0, 10.0])
    s = Scaler.fit(v)
    np.testing.assert_allclose(s.scale(v), [0, 0.25, 0.5, 1])
    np.testing.assert_allclose(s.inverse(s.scale(v)), v)
    ws = WindowSet.build(s.scale(v), 2, s)
    assert len(ws) == 2
    np.testing.assert_allclose(ws.inputs, [[0, 0.25], [0.25, 0.5]])
    np.testing.assert_allclose(ws.targets, [0.5, 1.0])
    const = Scaler.fit(np.full(4, 3.0))
    np.testing.assert_allclose(const.scale([3.0]), [0.0])


def test_train_deterministic_and_decreasing(spiky_sine, small_cfg):
    cfg = TrainConfig(**{**small_cfg.to_dict(), "epochs": 30, "patience": 50})
    m1, t1 = train(spiky_sine, cfg)
    m2, t2 = train(spiky_sine, cfg)
    assert m1.params.equals(m2.params)
    np.testing.assert_array_equal(t1.H, t2.H)
    assert m1.loss_history[-1] < m1.loss_history[0]
    L = cfg.window_length
    np.testing.assert_array_equal(t1.positions, np.arange(L - 1, spiky_sine.split_index - 1))
    assert t1.H.shape == (spiky_sine.split_index - L, cfg.hidden_size)


def test_trace_rows_are_window_states(spiky_sine, small_cfg):
    model, trace = train(spiky_sine, small_cfg)
    scaled = model.scaler.scale(spiky_sine.train)
    L = small_cfg.window_length
    pos = int(trace.positions[10])
    _, h, _ = forward_batch(model.params, scaled[None, pos - L + 1 : pos + 1])
    np.testing.assert_allclose(trace.H[10], h[0], rtol=1e-13)


def test_sgd_trains(spiky_sine):
    cfg = TrainConfig(epochs=5, hidden_size=4, optimizer="sgd", learning_rate=0.1)
    model, _ = train(spiky_sine, cfg)
    assert all(math.isfinite(x) for x in model.loss_history)


def test_divergence_raises():
    values = np.sin(np.arange(60) / 3.0)
    cfg = TrainConfig(epochs=5, hidden_size=4, optimizer="sgd", learning_rate=1e200)
    with pytest.raises(DivergenceError):
        train_values(values, cfg)


def test_too_short_series():
    with pytest.raises(ValueError):
        train_values(np.arange(12.0), TrainConfig(window_length=12))


def test_zero_epochs_records_initial_loss():
    model, _ = train_values(np.sin(np.arange(40.0)), TrainConfig(epochs=0, hidden_size=3))
    assert model.epochs_run == 0 and len(model.loss_history) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    cfg = TrainConfig(batch_size=2)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_forecast_and_model_roundtrip(tmp_path, spiky_sine, small_cfg):
    model, _ = train(spiky_sine, small_cfg)
    f = forecast(model, spiky_sine, spiky_sine.horizon)
    assert f.shape == (spiky_sine.horizon,) and np.all(np.isfinite(f))
    save_model(model, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json")
    assert again.params.equals(model.params)
    np.testing.assert_array_equal(forecast(again, spiky_sine, 18), f)
    with pytest.raises(ValueError):
        forecast(model, spiky_sine, 0)

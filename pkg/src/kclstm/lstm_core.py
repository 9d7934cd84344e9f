"""Single-layer LSTM with a scalar readout, trained by BPTT.

Gate layout follows the usual equations

    i_t = sigmoid(W_i h_{t-1} + V_i x_t + b_i)
    o_t = sigmoid(W_o h_{t-1} + V_o x_t + b_o)
    f_t = sigmoid(W_f h_{t-1} + V_f x_t + b_f)
    g_t = tanh(W_c h_{t-1} + V_c x_t + b_c)
    C_t = i_t * g_t + f_t * C_{t-1}
    h_t = o_t * tanh(C_t)

and the forecast is ``w_out . h_T + b_out`` for the last step of a window.
All four gates are stacked along the first axis in the order (i, o, f, c).
Everything runs in float64 on numpy; no ML framework is involved.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data_io import TimeSeries
from .errors import DimensionError, DivergenceError
from .state_dynamics import HiddenTrace

GATES = ("i", "o", "f", "c")
OPTIMIZERS = ("sgd", "adam")
GRID_LEARNING_RATES = (0.0001, 0.001, 0.01, 0.1)
GRID_BATCH_SIZES = (1, 2, 4, 8)
MODEL_FORMAT_VERSION = 1

# Set KCLSTM_DEBUG=1 to check gate/hidden ranges on every forward pass.
CHECK_INVARIANTS = os.environ.get("KCLSTM_DEBUG", "") not in ("", "0")


def sigmoid(x):
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True, eq=False)
class LstmParameters:
    """Gate weights plus the affine readout.

    ``W`` has shape (4, d, d), ``V`` (4, d, m), ``b`` (4, d); gate order is
    :data:`GATES`. ``w_out`` (d,) and ``b_out`` map the last hidden state to
    the scalar forecast.
    """

    W: np.ndarray
    V: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __post_init__(self):
        d = self.W.shape[1]
        m = self.V.shape[2] if self.V.ndim == 3 else -1
        if (
            self.W.shape != (4, d, d)
            or self.V.shape != (4, d, m)
            or self.b.shape != (4, d)
            or self.w_out.shape != (d,)
        ):
            raise DimensionError("inconsistent LSTM parameter shapes")
        object.__setattr__(self, "b_out", float(self.b_out))

    @property
    def hidden_size(self):
        return self.W.shape[1]

    @property
    def input_size(self):
        return self.V.shape[2]

    def gate(self, name):
        """(W_g, V_g, b_g) for gate ``name`` in ``"iofc"``."""
        k = GATES.index(name)
        return self.W[k], self.V[k], self.b[k]

    def flat(self):
        return np.concatenate(
            [self.W.ravel(), self.V.ravel(), self.b.ravel(), self.w_out, [self.b_out]]
        )

    @classmethod
    def from_flat(cls, vec, d, m):
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [4 * d * d, 4 * d * m, 4 * d, d, 1]
        if vec.shape != (sum(sizes),):
            raise DimensionError(f"flat vector has length {vec.size}, want {sum(sizes)}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(
            W=parts[0].reshape(4, d, d).copy(),
            V=parts[1].reshape(4, d, m).copy(),
            b=parts[2].reshape(4, d).copy(),
            w_out=parts[3].copy(),
            b_out=float(parts[4][0]),
        )

    @classmethod
    def zeros(cls, d, m):
        return cls(
            W=np.zeros((4, d, d)),
            V=np.zeros((4, d, m)),
            b=np.zeros((4, d)),
            w_out=np.zeros(d),
            b_out=0.0,
        )

    def equals(self, other):
        """Bitwise equality of every parameter."""
        return np.array_equal(self.flat(), other.flat())

    def to_dict(self):
        return {
            "hidden_size": self.hidden_size,
            "input_size": self.input_size,
            "W": self.W.ravel().tolist(),
            "V": self.V.ravel().tolist(),
            "b": self.b.ravel().tolist(),
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out,
        }

    @classmethod
    def from_dict(cls, d):
        h, m = d["hidden_size"], d["input_size"]
        return cls(
            W=np.array(d["W"], dtype=np.float64).reshape(4, h, h),
            V=np.array(d["V"], dtype=np.float64).reshape(4, h, m),
            b=np.array(d["b"], dtype=np.float64).reshape(4, h),
            w_out=np.array(d["w_out"], dtype=np.float64),
            b_out=d["b_out"],
        )


@dataclass(frozen=True, eq=False)
class LstmState:
    """Cell and hidden vectors after one step; the output is ``h``."""

    C: np.ndarray
    h: np.ndarray

    @property
    def z(self):
        return self.h

    @classmethod
    def zeros(cls, d):
        return cls(C=np.zeros(d), h=np.zeros(d))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 4
    epochs: int = 100
    window_length: int = 12
    seed: int = 0
    optimizer: str = "adam"
    hidden_size: int = 32
    # stop when the best epoch MSE improved by less than this over `patience` epochs
    early_stop_delta: float = 1e-6
    patience: int = 10
    shuffle: bool = True

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.window_length < 2:
            raise ValueError("window_length must be >= 2")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Scaler:
    """Min-max map of the training part onto [0, 1]."""

    lo: float
    hi: float

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.min()), float(values.max()))

    @property
    def span(self):
        # constant series: shift only
        return self.hi - self.lo if self.hi > self.lo else 1.0

    def scale(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lo) / self.span

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * self.span + self.lo


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Stride-1 sliding windows over a scaled training part.

    Window ``k`` reads positions ``origin[k] - L .. origin[k] - 1`` and its
    target is the value at ``origin[k]``.
    """

    inputs: np.ndarray  # (n_windows, L)
    targets: np.ndarray  # (n_windows,)
    origin: np.ndarray  # (n_windows,) target positions
    scaler: Scaler

    @property
    def scale_min(self):
        return self.scaler.lo

    @property
    def scale_max(self):
        return self.scaler.hi

    def __len__(self):
        return len(self.targets)

    @classmethod
    def build(cls, scaled, window_length, scaler):
        scaled = np.asarray(scaled, dtype=np.float64)
        L = window_length
        if len(scaled) <= L:
            raise ValueError(f"need more than {L} values to build windows, got {len(scaled)}")
        inputs = np.lib.stride_tricks.sliding_window_view(scaled[:-1], L).copy()
        origin = np.arange(L, len(scaled))
        return cls(inputs=inputs, targets=scaled[L:].copy(), origin=origin, scaler=scaler)


@dataclass(eq=False)
class LstmModel:
    params: LstmParameters
    config: TrainConfig
    scaler: Scaler
    loss_history: list = field(default_factory=list)
    epochs_run: int = 0

    @property
    def final_loss(self):
        return self.loss_history[-1] if self.loss_history else float("nan")

    def to_dict(self):
        return {
            "format": "kclstm-model",
            "version": MODEL_FORMAT_VERSION,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "scaler": {"min": self.scaler.lo, "max": self.scaler.hi},
            "params": self.params.to_dict(),
            "loss_history": list(self.loss_history),
            "epochs_run": self.epochs_run,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "kclstm-model":
            raise ValueError("not a kclstm model document")
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        return cls(
            params=LstmParameters.from_dict(d["params"]),
            config=TrainConfig.from_dict(d["config"]),
            scaler=Scaler(d["scaler"]["min"], d["scaler"]["max"]),
            loss_history=list(d["loss_history"]),
            epochs_run=d["epochs_run"],
        )


def save_model(model, path):
    import json

    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)
        fh.write("\n")


def load_model(path):
    import json

    with open(path) as fh:
        return LstmModel.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def init_parameters(seed, d, m):
    """Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases, forget bias 1."""
    if d < 1 or m < 1:
        raise ValueError("hidden and input sizes must be >= 1")
    rng = np.random.default_rng(seed)
    lim = 1.0 / math.sqrt(d)
    W = rng.uniform(-lim, lim, size=(4, d, d))
    V = rng.uniform(-lim, lim, size=(4, d, m))
    w_out = rng.uniform(-lim, lim, size=d)
    b = np.zeros((4, d))
    b[GATES.index("f")] = 1.0
    return LstmParameters(W=W, V=V, b=b, w_out=w_out, b_out=0.0)


def _step(p, x, h_prev, c_prev):
    """Batched cell update. x: (B, m), h_prev/c_prev: (B, d)."""
    d = p.hidden_size
    a = h_prev @ p.W.reshape(4 * d, d).T + x @ p.V.reshape(4 * d, -1).T + p.b.ravel()
    i = sigmoid(a[:, :d])
    o = sigmoid(a[:, d : 2 * d])
    f = sigmoid(a[:, 2 * d : 3 * d])
    g = np.tanh(a[:, 3 * d :])
    c = i * g + f * c_prev
    tc = np.tanh(c)
    h = o * tc
    if CHECK_INVARIANTS:
        for gate in (i, o, f):
            assert np.all((gate >= 0.0) & (gate <= 1.0)), "gate outside [0, 1]"
        assert np.all(np.abs(h) <= 1.0), "hidden state outside [-1, 1]"
    return h, c, (x, h_prev, c_prev, i, o, f, g, tc)


def _check_inputs(p, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3 or X.shape[2] != p.input_size:
        raise DimensionError(
            f"inputs must have shape (batch, steps, {p.input_size}), got {X.shape}"
        )
    if X.shape[1] == 0:
        raise ValueError("empty input sequence")
    return X


def forward_batch(p, X, keep_cache=False):
    """Run a batch of windows. X: (B, L) or (B, L, m).

    Returns ``(predictions (B,), last hidden (B, d), cache)``; the cache is
    ``None`` unless ``keep_cache``.
    """
    X = _check_inputs(p, X)
    B, L, _ = X.shape
    d = p.hidden_size
    h = np.zeros((B, d))
    c = np.zeros((B, d))
    cache = [] if keep_cache else None
    for t in range(L):
        h, c, step_cache = _step(p, X[:, t, :], h, c)
        if keep_cache:
            cache.append(step_cache)
    pred = h @ p.w_out + p.b_out
    return pred, h, cache


def backward_batch(p, cache, h_last, pred, targets):
    """Gradients of ``mean((pred - targets)**2)`` w.r.t. every parameter.

    Returns ``(loss, grads)`` with ``grads`` an :class:`LstmParameters`.
    """
    d = p.hidden_size
    B = len(pred)
    resid = pred - targets
    loss = float(np.mean(resid**2))
    dpred = 2.0 * resid / B

    dW = np.zeros((4 * d, d))
    dV = np.zeros((4 * d, p.input_size))
    db = np.zeros(4 * d)
    dw_out = h_last.T @ dpred
    db_out = float(dpred.sum())

    W_cat = p.W.reshape(4 * d, d)
    dh = np.outer(dpred, p.w_out)
    dc = np.zeros_like(dh)
    for x, h_prev, c_prev, i, o, f, g, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                do * o * (1.0 - o),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        dW += da.T @ h_prev
        dV += da.T @ x
        db += da.sum(axis=0)
        dh = da @ W_cat
        dc = dc * f

    grads = LstmParameters(
        W=dW.reshape(4, d, d),
        V=dV.reshape(4, d, p.input_size),
        b=db.reshape(4, d),
        w_out=dw_out,
        b_out=db_out,
    )
    return loss, grads


def cell_forward(p, x_t, prev):
    """One LSTM step on a single input vector."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=np.float64))
    d = p.hidden_size
    if x_t.shape != (p.input_size,):
        raise DimensionError(f"x_t must have length {p.input_size}, got {x_t.shape}")
    if prev.h.shape != (d,) or prev.C.shape != (d,):
        raise DimensionError(f"previous state must have length {d}")
    h, c, _ = _step(p, x_t[None, :], prev.h[None, :], prev.C[None, :])
    return LstmState(C=c[0], h=h[0])


def forward_sequence(p, inputs):
    """Chain :func:`cell_forward` from the zero state.

    Returns ``(states, prediction)`` where ``states[t]`` is the state after
    reading ``inputs[t]``.
    """
    if len(inputs) == 0:
        raise ValueError("empty input sequence")
    state = LstmState.zeros(p.hidden_size)
    states = []
    for x_t in inputs:
        state = cell_forward(p, x_t, state)
        states.append(state)
    return states, float(state.h @ p.w_out + p.b_out)


def bptt_gradients(p, window):
    """Exact gradients of ``(prediction - target)**2`` for one window.

    ``window`` is ``(inputs, target)`` with ``inputs`` of length L (scalars or
    m-vectors).
    """
    inputs, target = window
    X = np.asarray(inputs, dtype=np.float64)
    X = X.reshape(1, len(X), -1)
    pred, h_last, cache = forward_batch(p, X, keep_cache=True)
    _, grads = backward_batch(p, cache, h_last, pred, np.array([float(target)]))
    return grads


def window_loss(p, window):
    inputs, target = window
    X = np.asarray(inputs, dtype=np.float64).reshape(1, len(inputs), -1)
    pred, _, _ = forward_batch(p, X)
    return float((pred[0] - target) ** 2)


# ---------------------------------------------------------------------------
# Optimisers
# ---------------------------------------------------------------------------


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


class _Adam:
    def __init__(self, lr, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(cfg, size):
    if cfg.optimizer == "adam":
        return _Adam(cfg.learning_rate, size)
    return _Sgd(cfg.learning_rate)


# ---------------------------------------------------------------------------
# Training and forecasting
# ---------------------------------------------------------------------------


def prepare_windows(train_values, window_length):
    scaler = Scaler.fit(train_values)
    return WindowSet.build(scaler.scale(train_values), window_length, scaler)


def train_values(values, cfg):
    """Train on a raw training vector. See :func:`train`."""
    values = np.asarray(values, dtype=np.float64)
    L = cfg.window_length
    if len(values) <= L:
        raise ValueError(
            f"training part has {len(values)} values; need more than {L} "
            f"for window length {L}"
        )
    ws = prepare_windows(values, L)
    d = cfg.hidden_size
    params = init_parameters(cfg.seed, d, 1)
    X = ws.inputs[:, :, None]
    Y = ws.targets
    n_win = len(ws)
    rng = np.random.default_rng(cfg.seed)
    opt = _make_optimizer(cfg, params.flat().size)
    theta = params.flat()
    history = []
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_win) if cfg.shuffle else np.arange(n_win)
        total = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n_win, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                pred, h_last, cache = forward_batch(params, X[idx], keep_cache=True)
                loss, grads = backward_batch(params, cache, h_last, pred, Y[idx])
                if not math.isfinite(loss):
                    raise DivergenceError(epoch, loss)
                total += loss * len(idx)
                theta = opt.step(theta, grads.flat())
                if not np.all(np.isfinite(theta)):
                    raise DivergenceError(epoch)
                params = LstmParameters.from_flat(theta, d, 1)
        epoch_loss = total / n_win
        history.append(epoch_loss)
        epochs_run = epoch
        if len(history) > cfg.patience:
            earlier = min(history[: -cfg.patience])
            recent = min(history[-cfg.patience :])
            if earlier - recent < cfg.early_stop_delta:
                break

    # one sweep with the final parameters so every state is comparable
    pred, last_states, _ = forward_batch(params, X)
    if epochs_run == 0:
        history.append(float(np.mean((pred - Y) ** 2)))

    model = LstmModel(
        params=params,
        config=cfg,
        scaler=ws.scaler,
        loss_history=history,
        epochs_run=epochs_run,
    )
    # state after reading position t is filed under t (last input of the window)
    trace = HiddenTrace(positions=ws.origin - 1, H=last_states)
    return model, trace


def train(series, cfg):
    """Train a baseline LSTM on the training part of ``series``.

    Returns ``(model, trace)``. ``trace`` holds the last hidden state of
    every training window, computed with the parameters left by the final
    epoch, and filed under the position of the window's last input.
    """
    return train_values(series.train, cfg)


def timed_train(series, cfg):
    t0 = time.perf_counter()
    model, trace = train(series, cfg)
    return model, trace, time.perf_counter() - t0


def window_states(model, scaled, positions):
    """Last hidden state of the window ending at each position (scaled input)."""
    L = model.config.window_length
    scaled = np.asarray(scaled, dtype=np.float64)
    positions = np.asarray(positions)
    if np.any(positions < L - 1) or np.any(positions >= len(scaled)):
        raise IndexError("position without a full window")
    X = np.stack([scaled[p - L + 1 : p + 1] for p in positions])
    _, h, _ = forward_batch(model.params, X)
    return h


def forecast_scaled(model, history_scaled, horizon):
    L = model.config.window_length
    window = list(np.asarray(history_scaled, dtype=np.float64)[-L:])
    if len(window) < L:
        raise ValueError(f"need at least {L} history values")
    out = []
    for _ in range(horizon):
        pred, _, _ = forward_batch(model.params, np.array([window]))
        y = float(pred[0])
        out.append(y)
        window = window[1:] + [y]
    return np.array(out)


def forecast(model, series, horizon):
    """Recursive multi-step forecast from the end of the training part.

    Each prediction is fed back as the newest input. Output is in original
    units.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    train_part = series.train if isinstance(series, TimeSeries) else series
    scaled = model.scaler.scale(train_part)
    return model.scaler.inverse(forecast_scaled(model, scaled, horizon))


def with_seed(cfg, seed):
    return replace(cfg, seed=seed)

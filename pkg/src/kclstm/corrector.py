"""Three-phase KcLSTM fit: train, detect-and-correct, retrain.

Detection smooths the phase-1 hidden trace and flags positions whose state
is further (in DTW) than ``delta_d`` from its smoothed estimate. Each
flagged value is then nudged by a derivative-free hill-climb until the
state produced by the phase-1 model is within ``delta_c`` of the frozen
smoothed target, or restored to its original value when the iteration
budget runs out. Only the training part of a series is ever read or
modified here.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import lstm_core
from .state_dynamics import (
    SmoothingConfig,
    dtw_rows,
    kernel_weights,
    smooth_trace,
    trace_divergences,
)

# below this step (scaled units) the climb has stalled
MIN_STEP = 1e-3


@dataclass(frozen=True)
class CorrectionConfig:
    delta_d: float = 0.6
    delta_c: float = 0.5
    max_iters: int = 50
    # initial hill-climb step as a fraction of the scaled range (which is 1)
    step_init: float = 0.1
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)

    def __post_init__(self):
        if self.delta_d < 0 or self.delta_c < 0:
            raise ValueError("thresholds must be non-negative")
        if self.delta_c > self.delta_d:
            raise ValueError("correction threshold must not exceed detection threshold")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.step_init > 0:
            raise ValueError("step_init must be positive")

    def to_dict(self):
        return {
            "delta_d": self.delta_d,
            "delta_c": self.delta_c,
            "max_iters": self.max_iters,
            "step_init": self.step_init,
            "smoothing": self.smoothing.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["smoothing"] = SmoothingConfig.from_dict(d["smoothing"])
        return cls(**d)


@dataclass(frozen=True)
class CorrectedPoint:
    index: int
    old_value: float
    new_value: float
    old_scaled: float
    new_scaled: float
    iterations: int
    final_divergence: float


@dataclass
class CorrectionReport:
    KIND = "correction_report"
    CSV_COLUMNS = (
        "index",
        "status",
        "old_value",
        "new_value",
        "old_scaled",
        "new_scaled",
        "iterations",
        "final_divergence",
    )

    flagged: list = field(default_factory=list)
    corrected: list = field(default_factory=list)
    restored: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    restored_iterations: dict = field(default_factory=dict)
    restored_divergence: dict = field(default_factory=dict)
    # smoothed phase-1 trace, kept for plotting; not serialised
    trace: object = field(default=None, repr=False, compare=False)

    @property
    def corrected_indices(self):
        return [p.index for p in self.corrected]

    @property
    def changed(self):
        """Corrected points whose value actually moved."""
        return [p for p in self.corrected if p.new_value != p.old_value]

    def check(self, delta_c):
        c = set(self.corrected_indices)
        r = set(self.restored)
        assert c | r == set(self.flagged), "corrected + restored must cover flagged"
        assert not c & r, "a point cannot be both corrected and restored"
        assert all(p.final_divergence <= delta_c for p in self.corrected)

    def to_dict(self):
        return {
            "flagged": list(self.flagged),
            "corrected": [vars(p).copy() for p in self.corrected],
            "restored": list(self.restored),
            "restored_iterations": {str(k): v for k, v in self.restored_iterations.items()},
            "restored_divergence": {str(k): v for k, v in self.restored_divergence.items()},
            "timings": dict(self.timings),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            flagged=list(d["flagged"]),
            corrected=[CorrectedPoint(**p) for p in d["corrected"]],
            restored=list(d["restored"]),
            timings=dict(d["timings"]),
            restored_iterations={int(k): v for k, v in d["restored_iterations"].items()},
            restored_divergence={int(k): v for k, v in d["restored_divergence"].items()},
        )

    def csv_rows(self):
        rows = []
        for p in self.corrected:
            rows.append(
                [p.index, "corrected", repr(p.old_value), repr(p.new_value),
                 repr(p.old_scaled), repr(p.new_scaled), p.iterations,
                 repr(p.final_divergence)]
            )
        for i in self.restored:
            rows.append(
                [i, "restored", "", "", "", "", self.restored_iterations.get(i, ""),
                 repr(self.restored_divergence[i]) if i in self.restored_divergence else ""]
            )
        rows.sort(key=lambda r: r[0])
        return rows

    @classmethod
    def from_csv_rows(cls, rows):
        report = cls()
        for r in rows:
            idx = int(r[0])
            report.flagged.append(idx)
            if r[1] == "corrected":
                report.corrected.append(
                    CorrectedPoint(idx, float(r[2]), float(r[3]), float(r[4]),
                                   float(r[5]), int(r[6]), float(r[7]))
                )
            else:
                report.restored.append(idx)
                if r[6] != "":
                    report.restored_iterations[idx] = int(r[6])
                if r[7] != "":
                    report.restored_divergence[idx] = float(r[7])
        return report


def detect(trace, delta_d):
    """Series positions whose divergence exceeds ``delta_d``, ascending."""
    div = trace_divergences(trace)
    return [int(p) for p in np.sort(trace.positions[div > delta_d])]


def _state_divergence(model, window, target_state, values):
    """DTW divergence when the window's last input takes each of ``values``."""
    X = np.repeat(window[None, :], len(values), axis=0)
    X[:, -1] = values
    _, h, _ = lstm_core.forward_batch(model.params, X)
    return dtw_rows(np.broadcast_to(target_state, h.shape), h)


def correct_point(model, series_scaled, i, target_state, cfg, anchors=None):
    """Hill-climb the scaled value at position ``i`` toward ``target_state``.

    Candidates step from the current value toward each anchor (the midpoint
    of the neighbouring values, plus any extra ``anchors``) and in both plain
    directions; the best candidate is kept if it lowers the divergence,
    otherwise the step is halved. The climb gives up early once the step
    drops below ``MIN_STEP``.

    Returns
    -------
    (new_value, iterations, final_divergence, converged)
        ``new_value`` is in scaled units. When ``converged`` is false the
        caller is expected to restore the original value.
    """
    x = np.asarray(series_scaled, dtype=np.float64)
    L = model.config.window_length
    if not L - 1 <= i < len(x):
        raise IndexError(f"position {i} has no full input window")
    window = x[i - L + 1 : i + 1].copy()
    target_state = np.asarray(target_state, dtype=np.float64)

    neighbours = [x[j] for j in (i - 1, i + 1) if 0 <= j < len(x)]
    targets = [float(np.mean(neighbours))]
    if anchors is not None:
        targets.extend(float(a) for a in anchors)

    cur = float(x[i])
    div = float(_state_divergence(model, window, target_state, [cur])[0])
    if div <= cfg.delta_c:
        return cur, 0, div, True

    step = cfg.step_init
    for it in range(1, cfg.max_iters + 1):
        cands = []
        for a in targets:
            if a != cur:
                cands.append(cur + math.copysign(min(step, abs(a - cur)), a - cur))
        cands.extend([cur + step, cur - step])
        divs = _state_divergence(model, window, target_state, cands)
        best = int(np.argmin(divs))
        if divs[best] < div:
            cur, div = cands[best], float(divs[best])
        else:
            step *= 0.5
        if div <= cfg.delta_c:
            return cur, it, div, True
        if step < MIN_STEP:
            return float(x[i]), it, div, False
    return float(x[i]), cfg.max_iters, div, False


def run_correction(model, series, trace, cfg=CorrectionConfig()):
    """Detect and correct training values of ``series``.

    Points are visited in ascending order and each accepted correction is
    written before the next point's forward pass. Returns
    ``(corrected_series, report)``; the test part of the returned series is a
    copy of the original.
    """
    t0 = time.perf_counter()
    train = np.array(series.train, dtype=np.float64)
    scaled = model.scaler.scale(train)
    smoothed = smooth_trace(trace, cfg.smoothing)
    flagged = detect(smoothed, cfg.delta_d)
    report = CorrectionReport(flagged=list(flagged), trace=smoothed)

    for pos in flagged:
        row = smoothed.row_of(pos)
        idx, w = kernel_weights(smoothed.H, row, cfg.smoothing)
        implied = float(w @ scaled[smoothed.positions[idx]])
        new, iters, div, ok = correct_point(
            model, scaled, pos, smoothed.H_smoothed[row], cfg, anchors=[implied]
        )
        if ok:
            old = float(train[pos])
            if new != scaled[pos]:
                scaled[pos] = new
                train[pos] = float(model.scaler.inverse(new))
            report.corrected.append(
                CorrectedPoint(
                    index=pos,
                    old_value=old,
                    new_value=float(train[pos]),
                    old_scaled=float(model.scaler.scale(old)),
                    new_scaled=float(scaled[pos]),
                    iterations=iters,
                    final_divergence=div,
                )
            )
        else:
            report.restored.append(pos)
            report.restored_iterations[pos] = iters
            report.restored_divergence[pos] = div

    corrected = series.with_train(train)
    # evaluation data is always the original
    assert corrected.test.tobytes() == series.test.tobytes()
    report.check(cfg.delta_c)
    report.timings["correction"] = time.perf_counter() - t0
    return corrected, report


def kclstm_fit(series, train_cfg, corr_cfg=CorrectionConfig()):
    """Phase 1 train, correct the training data, phase 3 retrain.

    The phase-3 model is initialised with the same seed as phase 1, so with
    nothing corrected it is bit-identical to a baseline fit.
    Returns ``(model, corrected_series, report)``.
    """
    t0 = time.perf_counter()
    model1, trace = lstm_core.train(series, train_cfg)
    t1 = time.perf_counter()
    corrected, report = run_correction(model1, series, trace, corr_cfg)
    t2 = time.perf_counter()
    model3, _ = lstm_core.train(corrected, train_cfg)
    t3 = time.perf_counter()
    report.timings.update(
        {"phase1_train": t1 - t0, "correction": t2 - t1, "phase3_train": t3 - t2,
         "total": t3 - t0}
    )
    return model3, corrected, report

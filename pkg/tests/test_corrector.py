import numpy as np
import pytest

from kclstm.corrector import (
    CorrectedPoint,
    CorrectionConfig,
    CorrectionReport,
    correct_point,
    detect,
    kclstm_fit,
    run_correction,
)
from kclstm.lstm_core import forecast, train, window_states
from kclstm.state_dynamics import HiddenTrace, SmoothingConfig, smooth_trace, trace_divergences


@pytest.fixture
def fitted(spiky_sine, small_cfg):
    model, trace = train(spiky_sine, small_cfg)
    return spiky_sine, model, trace


def test_config_validation():
    with pytest.raises(ValueError):
        CorrectionConfig(delta_d=0.4, delta_c=0.5)
    with pytest.raises(ValueError):
        CorrectionConfig(step_init=0)
    cfg = CorrectionConfig(smoothing=SmoothingConfig(4, 0.3))
    assert CorrectionConfig.from_dict(cfg.to_dict()) == cfg


def test_detect_thresholds():
    H = np.zeros((20, 3))
    H[5] = 1.0
    t = smooth_trace(HiddenTrace(np.arange(10, 30), H), SmoothingConfig(4))
    div = trace_divergences(t)
    assert detect(t, div.max()) == []
    assert detect(t, 0.0) == sorted(int(p) for p in t.positions[div > 0])
    assert 15 in detect(t, 1.0)


def test_correct_point_recovers_known_value(fitted):
    series, model, _ = fitted
    scaled = model.scaler.scale(series.train)
    i = 40
    truth = scaled[i]
    target = window_states(model, scaled, [i])[0]
    moved = scaled.copy()
    moved[i] = truth + 0.4
    cfg = CorrectionConfig(delta_d=0.05, delta_c=0.01, max_iters=200)
    new, iters, div, ok = correct_point(model, moved, i, target, cfg, anchors=[truth])
    assert ok and div <= 0.01 and iters > 0
    assert abs(new - truth) < abs(moved[i] - truth)


def test_correct_point_already_close(fitted):
    series, model, _ = fitted
    scaled = model.scaler.scale(series.train)
    target = window_states(model, scaled, [30])[0]
    new, iters, div, ok = correct_point(model, scaled, 30, target, CorrectionConfig())
    assert (new, iters, div, ok) == (scaled[30], 0, 0.0, True)


def test_correct_point_gives_up_with_original(fitted):
    series, model, _ = fitted
    scaled = model.scaler.scale(series.train)
    unreachable = np.full(model.params.hidden_size, 5.0)  # outside tanh range
    new, iters, div, ok = correct_point(
        model, scaled, 30, unreachable, CorrectionConfig(max_iters=7)
    )
    assert not ok and new == scaled[30] and iters <= 7 and div > 0.5


def test_correct_point_needs_full_window(fitted):
    series, model, _ = fitted
    with pytest.raises(IndexError):
        correct_point(model, model.scaler.scale(series.train), 3, np.zeros(6), CorrectionConfig())


def test_run_correction_invariants(fitted):
    series, model, trace = fitted
    cfg = CorrectionConfig(delta_d=0.05, delta_c=0.04, max_iters=10)
    corrected, report = run_correction(model, series, trace, cfg)
    assert set(report.corrected_indices) | set(report.restored) == set(report.flagged)
    assert not set(report.corrected_indices) & set(report.restored)
    assert corrected.test.tobytes() == series.test.tobytes()
    touched = {p.index for p in report.changed}
    for k in range(series.split_index):
        if k not in touched:
            assert corrected.values[k] == series.values[k]
    for p in report.changed:
        assert corrected.values[p.index] == p.new_value
        assert p.final_divergence <= cfg.delta_c
    assert report.trace is not None and "correction" in report.timings


def test_high_threshold_is_noop(fitted):
    series, model, trace = fitted
    corrected, report = run_correction(model, series, trace, CorrectionConfig(1e9, 1e9))
    assert report.flagged == [] and corrected == series


def test_kclstm_fit_noop_matches_baseline(spiky_sine, small_cfg):
    base, _ = train(spiky_sine, small_cfg)
    model, corrected, report = kclstm_fit(spiky_sine, small_cfg, CorrectionConfig(1e9, 1e9))
    assert model.params.equals(base.params)
    np.testing.assert_array_equal(forecast(model, corrected, 18), forecast(base, spiky_sine, 18))
    assert set(report.timings) == {"phase1_train", "correction", "phase3_train", "total"}


def test_report_roundtrips():
    r = CorrectionReport(
        flagged=[3, 5, 9],
        corrected=[CorrectedPoint(3, 1.0, 0.5, 0.2, 0.1, 4, 0.3)],
        restored=[5, 9],
        restored_iterations={5: 50, 9: 12},
        restored_divergence={5: 0.9, 9: 0.7},
        timings={"correction": 0.1},
    )
    assert CorrectionReport.from_dict(r.to_dict()) == r
    back = CorrectionReport.from_csv_rows(r.csv_rows())
    assert back.flagged == r.flagged and back.corrected == r.corrected
    assert back.restored_divergence == r.restored_divergence
    with pytest.raises(AssertionError):
        CorrectionReport(flagged=[1], restored=[]).check(0.5)

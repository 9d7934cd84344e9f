"""Holdout evaluation: MASE, Diebold-Mariano, grid search and benchmarking."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from statistics import NormalDist

import numpy as np

from . import lstm_core
from .corrector import CorrectionConfig, kclstm_fit
from .data_io import TimeSeries
from .errors import DivergenceError, KcLstmError, UndefinedMaseError

log = logging.getLogger(__name__)

ALPHA = 0.05
DM_CRITICAL = NormalDist().inv_cdf(1.0 - ALPHA / 2.0)
VERDICTS = ("win_a", "win_b", "draw")
DEFAULT_GRID = {
    "learning_rate": lstm_core.GRID_LEARNING_RATES,
    "batch_size": lstm_core.GRID_BATCH_SIZES,
}


def holdout_split(series, s):
    """First ``s`` values for training, the remaining ``n - s`` for testing."""
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if not 0 < s < n:
        raise ValueError(f"split {s} must satisfy 0 < s < {n}")
    return series[:s].copy(), series[s:].copy()


def mase(forecast, test, full_series, s, *, absolute=True, denominator="full"):
    """Mean absolute scaled error of a holdout forecast.

    The numerator is the mean absolute forecast error over the test part.
    The denominator is the mean absolute one-step difference of the whole
    series (``denominator="full"``) or of the training part only
    (``"train"``). ``absolute=False`` gives the signed numerator, kept only
    for auditing against the literal published formula.
    """
    forecast = np.asarray(forecast, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    full = np.asarray(full_series, dtype=np.float64)
    n = len(full)
    if not 0 < s < n:
        raise ValueError(f"split {s} must satisfy 0 < s < {n}")
    if len(forecast) != n - s or len(test) != n - s:
        raise ValueError(f"forecast and test must both have length n - s = {n - s}")
    err = forecast - test
    num = float(np.mean(np.abs(err))) if absolute else float(np.mean(err))
    if denominator == "full":
        scale_part = full
    elif denominator == "train":
        scale_part = full[:s]
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    if len(scale_part) < 2:
        raise UndefinedMaseError("need at least two values for the naive scale")
    den = float(np.mean(np.abs(np.diff(scale_part))))
    if den == 0.0:
        raise UndefinedMaseError("naive one-step error is zero (constant series)")
    return num / den


@dataclass(frozen=True)
class DMResult:
    statistic: float
    verdict: str
    note: str = ""


def autocovariance(x, lag):
    x = np.asarray(x, dtype=np.float64)
    T = len(x)
    dev = x - x.mean()
    return float(np.dot(dev[lag:], dev[: T - lag])) / T


def diebold_mariano(errors_a, errors_b, h=1):
    """Diebold-Mariano test on squared-error loss.

    The loss differential is ``e_a**2 - e_b**2``. A significantly positive
    statistic means forecast b is better (``"win_b"``), significantly
    negative means a is better (``"win_a"``), otherwise ``"draw"``; the test
    is two-sided at 5% against the standard normal.
    """
    ea = np.asarray(errors_a, dtype=np.float64)
    eb = np.asarray(errors_b, dtype=np.float64)
    if ea.shape != eb.shape or ea.ndim != 1:
        raise ValueError("error vectors must be 1-D and of equal length")
    T = len(ea)
    if T < 4:
        raise ValueError("Diebold-Mariano needs at least 4 paired errors")
    if h < 1:
        raise ValueError("horizon must be >= 1")
    d = ea * ea - eb * eb
    if np.all(d == 0):
        return DMResult(0.0, "draw", "identical losses")
    dbar = float(d.mean())
    gamma0 = autocovariance(d, 0)
    var = gamma0 + 2.0 * sum(autocovariance(d, k) for k in range(1, min(h, T)))
    note = ""
    if var <= 0:
        var = gamma0
        note = "long-run variance not positive; used lag-0 variance"
    if var == 0:
        stat = math.copysign(math.inf, dbar)
        note = "loss differential is constant"
    else:
        stat = dbar / math.sqrt(var / T)
    if abs(stat) < DM_CRITICAL:
        verdict = "draw"
    else:
        verdict = "win_b" if stat > 0 else "win_a"
    return DMResult(stat, verdict, note)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


class GridSearchError(KcLstmError):
    def __init__(self, failures):
        self.failures = failures
        lines = "; ".join(f"lr={lr}, batch={bs}: {msg}" for (lr, bs), msg in failures.items())
        super().__init__(f"every grid cell failed: {lines}")


def _validation_series(series, validation_fraction):
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must be in (0, 1)")
    train = np.asarray(series.train)
    n_val = max(1, int(round(validation_fraction * len(train))))
    clean = None if series.clean_values is None else series.clean_values[: len(train)]
    return TimeSeries(
        id=f"{series.id}/validation",
        values=train,
        split_index=len(train) - n_val,
        provenance=series.provenance,
        clean_values=clean,
    )


def _score_cell(val, cfg):
    model, _ = lstm_core.train(val, cfg)
    f = lstm_core.forecast(model, val, val.horizon)
    score = mase(f, val.test, val.values, val.split_index)
    if not math.isfinite(score):
        raise DivergenceError(model.epochs_run, score)
    return score


def grid_scores(series, grid=None, validation_fraction=0.2, base_cfg=None):
    """Validation MASE per (learning_rate, batch_size) cell.

    Returns ``(scores, failures)`` dictionaries keyed by the cell.
    """
    grid = DEFAULT_GRID if grid is None else grid
    base_cfg = base_cfg or lstm_core.TrainConfig()
    cells = sorted(
        (float(lr), int(bs)) for lr in grid["learning_rate"] for bs in grid["batch_size"]
    )
    if not cells:
        raise ValueError("empty grid")
    val = _validation_series(series, validation_fraction)
    scores, failures = {}, {}
    for lr, bs in cells:
        cfg = replace(base_cfg, learning_rate=lr, batch_size=bs)
        try:
            scores[(lr, bs)] = _score_cell(val, cfg)
        except (KcLstmError, ValueError, FloatingPointError) as exc:
            failures[(lr, bs)] = str(exc)
            log.info("grid cell lr=%s batch=%s failed: %s", lr, bs, exc)
    return scores, failures


def grid_search(series, grid=None, validation_fraction=0.2, base_cfg=None):
    """Pick the (learning_rate, batch_size) with the lowest validation MASE.

    The training part is split temporally; the last ``validation_fraction``
    of it is the validation holdout. Ties go to the lower learning rate, then
    the smaller batch.
    """
    base_cfg = base_cfg or lstm_core.TrainConfig()
    scores, failures = grid_scores(series, grid, validation_fraction, base_cfg)
    if not scores:
        raise GridSearchError(failures)
    # cells are keyed (lr, batch): min over (score, lr, batch) breaks ties
    lr, bs = min(scores, key=lambda cell: (scores[cell], cell))
    return replace(base_cfg, learning_rate=lr, batch_size=bs)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass
class SeriesResult:
    series_id: str
    status: str = "ok"
    mase_baseline: float = math.nan
    mase_kclstm: float = math.nan
    dm_statistic: float = math.nan
    dm_verdict: str = ""
    time_baseline: float = math.nan
    time_kclstm: float = math.nan
    n_flagged: int = 0
    n_corrected: int = 0
    n_restored: int = 0
    learning_rate: float = math.nan
    batch_size: int = 0
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


def _agg(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"mean": math.nan, "median": math.nan, "std": math.nan}
    return {"mean": float(v.mean()), "median": float(np.median(v)), "std": float(v.std())}


@dataclass
class EvalReport:
    """Per-series benchmark rows plus aggregates derived from them.

    Algorithm a in the DM comparison is the baseline LSTM, b is KcLSTM.
    """

    KIND = "eval_report"
    CSV_COLUMNS = tuple(SeriesResult.__dataclass_fields__)

    rows: list = field(default_factory=list)

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.ok]

    def aggregates(self):
        ok = self.ok_rows
        out = {}
        for algo in ("baseline", "kclstm"):
            a = _agg([getattr(r, f"mase_{algo}") for r in ok])
            times = [getattr(r, f"time_{algo}") for r in ok]
            a["avg_time"] = float(np.mean(times)) if times else math.nan
            out[algo] = a
        return out

    def tallies(self):
        ok = self.ok_rows
        return {
            "kclstm_wins": sum(r.dm_verdict == "win_b" for r in ok),
            "baseline_wins": sum(r.dm_verdict == "win_a" for r in ok),
            "draws": sum(r.dm_verdict == "draw" for r in ok),
            "evaluated": len(ok),
            "failed": len(self.rows) - len(ok),
            "kclstm_lower_mase": sum(r.mase_kclstm < r.mase_baseline for r in ok),
        }

    def to_dict(self):
        return {
            "rows": [asdict(r) for r in self.rows],
            "aggregates": self.aggregates(),
            "tallies": self.tallies(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(rows=[SeriesResult(**r) for r in d["rows"]])

    def csv_rows(self):
        return [
            [repr(v) if isinstance(v, float) else v for v in asdict(r).values()]
            for r in self.rows
        ]

    @classmethod
    def from_csv_rows(cls, rows):
        fields = SeriesResult.__dataclass_fields__
        out = []
        for raw in rows:
            kw = {}
            for (name, f), cell in zip(fields.items(), raw):
                typ = f.type if isinstance(f.type, str) else f.type.__name__
                if typ == "float":
                    kw[name] = float(cell)
                elif typ == "int":
                    kw[name] = int(cell)
                else:
                    kw[name] = cell
            out.append(SeriesResult(**kw))
        return cls(rows=out)

    def summary_table(self):
        """Rows of (algorithm, mean, median, std, avg_time_s)."""
        agg = self.aggregates()
        return [
            [name, agg[key]["mean"], agg[key]["median"], agg[key]["std"],
             round(agg[key]["avg_time"], 2)]
            for name, key in (("LSTM", "baseline"), ("KcLSTM", "kclstm"))
        ]


def evaluate_series(series, train_cfg, corr_cfg=CorrectionConfig(), *, grid=None, dm_horizon=None):
    """Baseline LSTM vs KcLSTM on one series; never raises."""
    row = SeriesResult(series_id=series.id)
    try:
        cfg = grid_search(series, grid, base_cfg=train_cfg) if grid else train_cfg
        row.learning_rate, row.batch_size = cfg.learning_rate, cfg.batch_size
        H = series.horizon

        t0 = time.perf_counter()
        base, _ = lstm_core.train(series, cfg)
        row.time_baseline = time.perf_counter() - t0

        t0 = time.perf_counter()
        kc, corrected, report = kclstm_fit(series, cfg, corr_cfg)
        row.time_kclstm = time.perf_counter() - t0

        # evaluation always uses the original test values
        assert corrected.test.tobytes() == series.test.tobytes()
        fb = lstm_core.forecast(base, series, H)
        fk = lstm_core.forecast(kc, corrected, H)
        row.mase_baseline = mase(fb, series.test, series.values, series.split_index)
        row.mase_kclstm = mase(fk, series.test, series.values, series.split_index)
        h = default_dm_horizon(series) if dm_horizon is None else dm_horizon
        dm = diebold_mariano(fb - series.test, fk - series.test, h=h)
        row.dm_statistic, row.dm_verdict = dm.statistic, dm.verdict
        row.n_flagged = len(report.flagged)
        row.n_corrected = len(report.changed)
        row.n_restored = len(report.restored)
    except Exception as exc:  # recorded per series; the run continues
        log.warning("series %s failed: %s", series.id, exc)
        row.status = "failed"
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def default_dm_horizon(series):
    """18 (M4 Monthly horizon) for M4 series, 1 for synthetic ones."""
    return 18 if series.provenance == "m4_csv" else 1


def _evaluate_star(args):
    series, train_cfg, corr_cfg, grid, dm_horizon = args
    return evaluate_series(series, train_cfg, corr_cfg, grid=grid, dm_horizon=dm_horizon)


def benchmark(series_set, train_cfg=None, corr_cfg=None, *, grid=None, dm_horizon=None, workers=1):
    """Run baseline and KcLSTM on every series with identical seeds.

    Timings cover training and correction only (monotonic clock). Failures
    are recorded per series. ``workers > 1`` evaluates series in separate
    processes, which makes timings less comparable.
    """
    if not series_set:
        raise ValueError("empty series set")
    train_cfg = train_cfg or lstm_core.TrainConfig()
    corr_cfg = corr_cfg or CorrectionConfig()
    jobs = [(s, train_cfg, corr_cfg, grid, dm_horizon) for s in series_set]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_star, jobs))
    else:
        rows = [_evaluate_star(j) for j in jobs]
    return EvalReport(rows=rows)

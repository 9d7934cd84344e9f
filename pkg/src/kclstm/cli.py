"""Command-line entry point: ``kclstm {train,correct,benchmark,synth}``.

Every command writes its outputs plus a ``manifest.json`` (full arguments,
versions, hardware, timings) into ``--out-dir``. Passing that manifest back
with ``--from-manifest`` reruns the same command with the same arguments.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, data_io, evaluation, lstm_core
from .corrector import CorrectionConfig, kclstm_fit
from .errors import DataFormatError, DivergenceError
from .state_dynamics import MEDIAN, SmoothingConfig, export_trace_csv

log = logging.getLogger("kclstm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text}")
    return v


def _count(minimum):
    def parse(text):
        v = int(text)
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}: {text}")
        return v

    return parse


def _bandwidth(text):
    if text == MEDIAN:
        return MEDIAN
    return _positive_float(text)


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--learning-rate", type=_positive_float, default=0.01)
    g.add_argument("--batch-size", type=_count(1), default=4)
    g.add_argument("--epochs", type=_count(0), default=100)
    g.add_argument("--window-length", type=_count(2), default=12)
    g.add_argument("--hidden-size", type=_count(1), default=32)
    g.add_argument("--optimizer", choices=lstm_core.OPTIMIZERS, default="adam")
    g.add_argument("--early-stop-delta", type=_nonneg_float, default=1e-6)
    g.add_argument("--patience", type=_count(1), default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", action="store_true",
                   help="grid-search learning rate x batch size first")
    g.add_argument("--validation-fraction", type=float, default=0.2)


def _add_correction_flags(p):
    g = p.add_argument_group("correction")
    g.add_argument("--delta-d", type=_nonneg_float, default=0.6)
    g.add_argument("--delta-c", type=_nonneg_float, default=0.5)
    g.add_argument("--max-iters", type=_count(0), default=50)
    g.add_argument("--step-init", type=_positive_float, default=0.1)
    g.add_argument("--smooth-window", type=_count(2), default=12)
    g.add_argument("--bandwidth", type=_bandwidth, default=MEDIAN,
                   help="kernel bandwidth or 'median'")


def _add_input_flags(p, single):
    p.add_argument("--input", required=False,
                   help="series corpus (.json) or M4-layout CSV")
    p.add_argument("--test-path", help="M4 test CSV matching --input")
    p.add_argument("--limit", type=_count(0), default=None)
    if single:
        p.add_argument("--series", default="0",
                       help="series id or zero-based index (default 0)")


def build_parser():
    parser = _Parser(prog="kclstm", description="Kernel corrector LSTM")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("train", "correct", "benchmark", "synth"):
        p = sub.add_parser(name)
        p.add_argument("--out-dir", required=False)
        p.add_argument("--from-manifest", help="rerun with the arguments of a manifest")
        if name != "synth":
            _add_input_flags(p, single=name != "benchmark")
            _add_train_flags(p)
        if name in ("correct", "benchmark"):
            _add_correction_flags(p)
        if name == "benchmark":
            p.add_argument("--workers", type=_count(1), default=1)
            p.add_argument("--dm-horizon", type=_count(1), default=None)
            p.add_argument("--format", choices=("json", "csv"), default="json",
                           help="format of the main report (the other is also written)")
        if name == "synth":
            p.add_argument("--kind", choices=data_io.SYNTH_KINDS + ("mixed",), default="sine")
            p.add_argument("--count", type=_count(1), default=1)
            p.add_argument("--n", type=_count(4), default=240)
            p.add_argument("--noise-sd", type=_nonneg_float, default=0.05)
            p.add_argument("--outliers", type=_count(0), default=5)
            p.add_argument("--magnitude", type=_nonneg_float, default=8.0)
            p.add_argument("--period", type=_count(2), default=12)
            p.add_argument("--horizon", type=_count(1), default=data_io.M4_MONTHLY_HORIZON)
            p.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _train_config(a):
    return lstm_core.TrainConfig(
        learning_rate=a.learning_rate,
        batch_size=a.batch_size,
        epochs=a.epochs,
        window_length=a.window_length,
        seed=a.seed,
        optimizer=a.optimizer,
        hidden_size=a.hidden_size,
        early_stop_delta=a.early_stop_delta,
        patience=a.patience,
    )


def _correction_config(a):
    return CorrectionConfig(
        delta_d=a.delta_d,
        delta_c=a.delta_c,
        max_iters=a.max_iters,
        step_init=a.step_init,
        smoothing=SmoothingConfig(window=a.smooth_window, bandwidth=a.bandwidth),
    )


def _load_input(a):
    if not a.input:
        raise UsageError("--input is required")
    path = Path(a.input)
    if not path.is_file():
        raise DataFormatError(f"{path}: no such file")
    limit = a.limit if a.limit is not None else 10**9
    if path.suffix.lower() == ".csv":
        return data_io.load_m4_csv(
            path, limit, window_length=a.window_length, test_path=a.test_path
        )
    return data_io.load_series(path)[:limit]


def _pick_series(corpus, key):
    for s in corpus:
        if s.id == key:
            return s
    try:
        return corpus[int(key)]
    except (ValueError, IndexError):
        raise DataFormatError(f"series {key!r} not found in input") from None


def _out_dir(a):
    if not a.out_dir:
        raise UsageError("--out-dir is required")
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def _write_csv(path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _manifest(a, timings):
    args = {k: v for k, v in vars(a).items() if k not in ("from_manifest", "verbose")}
    return {
        "command": a.command,
        "args": args,
        "seed": args.get("seed"),
        "versions": {
            "kclstm": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "hardware": {
            "platform": platform.platform(),
            "machine": platform.machine(),
            "processor": platform.processor() or "unknown",
        },
        "timings_s": {k: round(v, 2) for k, v in timings.items()},
    }


def _secs(v):
    return round(v, 2)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(a):
    series = _pick_series(_load_input(a), a.series)
    cfg = _train_config(a)
    timings = {}
    if a.grid:
        t0 = time.perf_counter()
        cfg = evaluation.grid_search(series, validation_fraction=a.validation_fraction, base_cfg=cfg)
        timings["grid_search"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    model, _ = lstm_core.train(series, cfg)
    timings["train"] = time.perf_counter() - t0

    out = _out_dir(a)
    lstm_core.save_model(model, out / "model.json")
    _write_json(
        out / "summary.json",
        {
            "series_id": series.id,
            "final_loss": model.final_loss,
            "epochs_run": model.epochs_run,
            "train_time_s": _secs(timings["train"]),
            "config": cfg.to_dict(),
        },
    )
    _write_json(out / "manifest.json", _manifest(a, timings))
    return EXIT_OK


def cmd_correct(a):
    series = _pick_series(_load_input(a), a.series)
    cfg = _train_config(a)
    corr = _correction_config(a)
    timings = {}
    if a.grid:
        t0 = time.perf_counter()
        cfg = evaluation.grid_search(series, validation_fraction=a.validation_fraction, base_cfg=cfg)
        timings["grid_search"] = time.perf_counter() - t0
    model, corrected, report = kclstm_fit(series, cfg, corr)
    timings.update(report.timings)

    out = _out_dir(a)
    data_io.export_series_csv(series, corrected, report, out / "corrected.csv")
    data_io.persist_report(report, out / "correction_report.json", "json")
    data_io.persist_report(report, out / "correction_report.csv", "csv")
    if report.trace is not None:
        export_trace_csv(report.trace, out / "trace.csv")
    lstm_core.save_model(model, out / "model.json")
    _write_json(
        out / "summary.json",
        {
            "series_id": series.id,
            "flagged": len(report.flagged),
            "corrected": len(report.changed),
            "restored": len(report.restored),
            "final_loss": model.final_loss,
            "timings_s": {k: _secs(v) for k, v in report.timings.items()},
            "config": cfg.to_dict(),
            "correction": corr.to_dict(),
        },
    )
    _write_json(out / "manifest.json", _manifest(a, timings))
    return EXIT_OK


def cmd_benchmark(a):
    corpus = _load_input(a)
    if not corpus:
        raise DataFormatError("input contains no usable series")
    grid = evaluation.DEFAULT_GRID if a.grid else None
    t0 = time.perf_counter()
    report = evaluation.benchmark(
        corpus,
        _train_config(a),
        _correction_config(a),
        grid=grid,
        dm_horizon=a.dm_horizon,
        workers=a.workers,
    )
    wall = time.perf_counter() - t0

    out = _out_dir(a)
    other = "csv" if a.format == "json" else "json"
    data_io.persist_report(report, out / f"eval_report.{a.format}", a.format)
    data_io.persist_report(report, out / f"eval_report.{other}", other)
    _write_csv(
        out / "mase_pairs.csv",
        ["series_id", "mase_lstm", "mase_kclstm", "dm_verdict"],
        [[r.series_id, repr(r.mase_baseline), repr(r.mase_kclstm), r.dm_verdict]
         for r in report.ok_rows],
    )
    _write_csv(
        out / "summary_table.csv",
        ["algorithm", "mean", "median", "std", "avg_time_s"],
        [[row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4]]
         for row in report.summary_table()],
    )
    t = report.tallies()
    _write_csv(
        out / "tallies.csv",
        ["kclstm_wins", "lstm_wins", "draws", "evaluated", "failed"],
        [[t["kclstm_wins"], t["baseline_wins"], t["draws"], t["evaluated"], t["failed"]]],
    )
    agg = report.aggregates()
    _write_json(
        out / "manifest.json",
        _manifest(a, {"wall": wall, "avg_lstm": agg["baseline"]["avg_time"],
                      "avg_kclstm": agg["kclstm"]["avg_time"]}),
    )
    if t["evaluated"] == 0:
        log.error("no series could be evaluated")
        return EXIT_DATA
    return EXIT_OK


def cmd_synth(a):
    t0 = time.perf_counter()
    if a.kind == "mixed":
        corpus = data_io.synthetic_corpus(
            a.count, a.seed, n=a.n, noise_sd=a.noise_sd,
            outlier_magnitude=a.magnitude, horizon=a.horizon,
        )
    else:
        corpus = [
            data_io.synthesize(
                a.kind, a.n, a.noise_sd, a.outliers, a.magnitude, a.seed + k,
                horizon=a.horizon, period=a.period,
                series_id=f"{a.kind}-{a.seed + k}",
            )
            for k in range(a.count)
        ]
    out = _out_dir(a)
    data_io.save_series(corpus, out / "series.json")
    data_io.write_m4_csv(corpus, out / "series.csv")
    _write_json(out / "manifest.json", _manifest(a, {"synth": time.perf_counter() - t0}))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "correct": cmd_correct,
    "benchmark": cmd_benchmark,
    "synth": cmd_synth,
}


def _apply_manifest(a):
    doc = json.loads(Path(a.from_manifest).read_text())
    if doc.get("command") != a.command:
        raise UsageError(
            f"manifest is for {doc.get('command')!r}, not {a.command!r}"
        )
    out_dir = a.out_dir
    for k, v in doc["args"].items():
        setattr(a, k, v)
    if out_dir:
        a.out_dir = out_dir
    return a


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if a.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if a.from_manifest:
            a = _apply_manifest(a)
        return COMMANDS[a.command](a)
    except UsageError as exc:
        print(f"kclstm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"kclstm: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataFormatError, OSError) as exc:
        print(f"kclstm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"kclstm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

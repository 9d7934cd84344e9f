"""Series ingestion, synthetic corpora and report persistence.

Numbers are always written with ``repr`` so every float survives a
write/read cycle bit-for-bit.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

log = logging.getLogger(__name__)

M4_MONTHLY_HORIZON = 18
PROVENANCES = ("m4_csv", "synthetic")
SYNTH_KINDS = ("sine", "trend_sine", "random_walk")


def _frozen_array(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """A univariate series with its holdout split.

    ``values[:split_index]`` is the training part, the rest is the test part.
    Synthetic series also carry the noise-free signal and the positions of
    injected outliers so detection can be scored.
    """

    id: str
    values: np.ndarray
    split_index: int
    provenance: str = "synthetic"
    clean_values: np.ndarray | None = None
    outlier_indices: tuple[int, ...] = ()

    def __post_init__(self):
        values = _frozen_array(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError("series values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"series {self.id!r} contains non-finite values")
        n = len(values)
        if not 0 < self.split_index < n:
            raise ValueError(f"split index {self.split_index} outside (0, {n})")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.clean_values is not None:
            clean = _frozen_array(self.clean_values)
            if clean.shape != values.shape:
                raise ValueError("clean_values must match values in length")
            object.__setattr__(self, "clean_values", clean)
        if (self.clean_values is not None) != (self.provenance == "synthetic"):
            raise ValueError("clean_values are required exactly for synthetic series")
        object.__setattr__(self, "split_index", int(self.split_index))
        object.__setattr__(
            self, "outlier_indices", tuple(int(i) for i in self.outlier_indices)
        )

    @property
    def n(self):
        return len(self.values)

    @property
    def train(self):
        return self.values[: self.split_index]

    @property
    def test(self):
        return self.values[self.split_index :]

    @property
    def horizon(self):
        return self.n - self.split_index

    def with_train(self, new_train):
        """Copy of this series with the training part replaced.

        The test part is copied from ``self`` untouched.
        """
        new_train = np.asarray(new_train, dtype=np.float64)
        if new_train.shape != (self.split_index,):
            raise ValueError("replacement training part has the wrong length")
        values = np.concatenate([new_train, self.test])
        return TimeSeries(
            id=self.id,
            values=values,
            split_index=self.split_index,
            provenance=self.provenance,
            clean_values=self.clean_values,
            outlier_indices=self.outlier_indices,
        )

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        clean_eq = (self.clean_values is None and other.clean_values is None) or (
            self.clean_values is not None
            and other.clean_values is not None
            and np.array_equal(self.clean_values, other.clean_values)
        )
        return (
            self.id == other.id
            and self.split_index == other.split_index
            and self.provenance == other.provenance
            and self.outlier_indices == other.outlier_indices
            and np.array_equal(self.values, other.values)
            and clean_eq
        )

    __hash__ = None

    def to_dict(self):
        return {
            "id": self.id,
            "provenance": self.provenance,
            "split_index": self.split_index,
            "values": [float(v) for v in self.values],
            "clean_values": None
            if self.clean_values is None
            else [float(v) for v in self.clean_values],
            "outlier_indices": list(self.outlier_indices),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            values=d["values"],
            split_index=d["split_index"],
            provenance=d["provenance"],
            clean_values=d.get("clean_values"),
            outlier_indices=tuple(d.get("outlier_indices", ())),
        )


# ---------------------------------------------------------------------------
# M4 ingestion
# ---------------------------------------------------------------------------


def _parse_m4_rows(path):
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open ({exc})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            sid = row[0].strip()
            cells = [c.strip() for c in row[1:]]
            while cells and not cells[-1]:
                cells.pop()
            values = []
            for col_no, cell in enumerate(cells, start=2):
                if not cell:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {row_no}, column {col_no}: "
                        f"not a number: {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataFormatError(
                        f"{path}: row {row_no}, column {col_no}: non-finite value"
                    )
                values.append(v)
            yield sid, values


def load_m4_csv(
    path,
    limit,
    *,
    horizon=M4_MONTHLY_HORIZON,
    window_length=12,
    test_path=None,
):
    """Read series from an M4-layout CSV.

    Parameters
    ----------
    path : path-like
        CSV with a header row; each data row is a series id followed by its
        values. Trailing empty cells are ignored.
    limit : int
        Maximum number of series returned, in file order.
    horizon : int
        Length of the test part when ``test_path`` is not given: the last
        ``horizon`` values of each row become the holdout.
    window_length : int
        Series shorter than ``window_length + horizon + 2`` are skipped with a
        warning.
    test_path : path-like, optional
        Matching M4 test file. When given, its values are appended to each
        training row and the split falls at the end of the training row.

    Returns
    -------
    list of TimeSeries
    """
    if limit < 0:
        raise ValueError("limit must be non-negative")
    if limit == 0:
        return []
    test_rows = None
    if test_path is not None:
        test_rows = dict(_parse_m4_rows(test_path))

    min_len = window_length + horizon + 2
    out = []
    for sid, values in _parse_m4_rows(path):
        if len(out) >= limit:
            break
        if test_rows is not None:
            if sid not in test_rows:
                raise DataFormatError(f"{test_path}: no test row for series {sid!r}")
            split = len(values)
            values = values + test_rows[sid]
        else:
            split = len(values) - horizon
        if len(values) < min_len or split <= 0:
            warnings.warn(
                f"skipping series {sid!r}: length {len(values)} < {min_len}",
                stacklevel=2,
            )
            continue
        out.append(
            TimeSeries(id=sid, values=values, split_index=split, provenance="m4_csv")
        )
    return out


def write_m4_csv(series_list, path):
    """Write series in M4 layout (id, V1..Vk); the split is not recorded."""
    width = max((s.n for s in series_list), default=0)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["V1"] + [f"V{k + 2}" for k in range(width)])
        for s in series_list:
            w.writerow([s.id] + [repr(float(v)) for v in s.values])


# ---------------------------------------------------------------------------
# Synthetic series
# ---------------------------------------------------------------------------


def synthesize(
    kind,
    n,
    noise_sd,
    n_outliers,
    outlier_magnitude,
    seed,
    *,
    horizon=M4_MONTHLY_HORIZON,
    window_length=12,
    period=12,
    amplitude=1.0,
    series_id=None,
):
    """Generate a seeded synthetic series with injected spikes.

    Spikes of ``±outlier_magnitude`` noise standard deviations are placed at
    distinct positions in ``[window_length, n - horizon - 2]`` so they are
    never in the test part and never inside the first window. When
    ``noise_sd`` is zero the spike unit falls back to the standard deviation
    of the clean signal.
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown series kind {kind!r}; expected one of {SYNTH_KINDS}")
    if n_outliers < 0 or n_outliers >= n / 10:
        raise ValueError("n_outliers must satisfy 0 <= n_outliers < n/10")
    split = n - horizon
    if split <= window_length + 1:
        raise ValueError("series too short for the requested horizon and window")
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    if kind == "sine":
        clean = amplitude * np.sin(2.0 * np.pi * t / period + phase)
    elif kind == "trend_sine":
        slope = rng.uniform(0.005, 0.02) * amplitude
        clean = slope * t + amplitude * np.sin(2.0 * np.pi * t / period + phase)
    else:
        steps = rng.normal(0.0, 0.1 * amplitude, size=n)
        steps[0] = 0.0
        clean = np.cumsum(steps)
    noise = rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else np.zeros(n)
    values = clean + noise

    indices = ()
    if n_outliers:
        unit = noise_sd if noise_sd > 0 else float(np.std(clean)) or 1.0
        candidates = np.arange(window_length, split - 1)
        picked = np.sort(rng.choice(candidates, size=n_outliers, replace=False))
        signs = rng.choice([-1.0, 1.0], size=n_outliers)
        values[picked] += signs * outlier_magnitude * unit
        indices = tuple(int(i) for i in picked)
    assert all(i < split for i in indices)

    return TimeSeries(
        id=series_id or f"{kind}-{seed}",
        values=values,
        split_index=split,
        provenance="synthetic",
        clean_values=clean,
        outlier_indices=indices,
    )


def synthetic_corpus(
    n_series,
    seed,
    *,
    n=144,
    noise_sd=0.05,
    outliers=(2, 5),
    outlier_magnitude=8.0,
    horizon=M4_MONTHLY_HORIZON,
    window_length=12,
):
    """Mixed sine / trend-sine / random-walk corpus with 2-5 spikes per series."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_series):
        kind = SYNTH_KINDS[k % len(SYNTH_KINDS)]
        n_out = int(rng.integers(outliers[0], outliers[1] + 1))
        out.append(
            synthesize(
                kind,
                n,
                noise_sd,
                n_out,
                outlier_magnitude,
                seed=int(rng.integers(2**31)),
                horizon=horizon,
                window_length=window_length,
                series_id=f"S{k:03d}-{kind}",
            )
        )
    return out


# ---------------------------------------------------------------------------
# Series / report persistence
# ---------------------------------------------------------------------------


def save_series(series_list, path):
    doc = {"format": "kclstm-series", "version": 1}
    doc["series"] = [s.to_dict() for s in series_list]
    _write_text(path, json.dumps(doc, indent=1) + "\n")


def load_series(path):
    """Load series from a JSON corpus or an M4-layout CSV (by extension)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_m4_csv(path, limit=10**9)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("format") != "kclstm-series":
        raise DataFormatError(f"{path}: not a series document")
    return [TimeSeries.from_dict(d) for d in doc["series"]]


def export_series_csv(original, corrected, report, path):
    """Per-position comparison of original and corrected values."""
    flagged = set(report.flagged)
    restored = set(report.restored)
    rows = []
    for pos in range(original.n):
        rows.append(
            [
                pos,
                repr(float(original.values[pos])),
                repr(float(corrected.values[pos])),
                int(pos in flagged),
                int(pos in restored),
            ]
        )
    _write_csv(path, ["position", "original", "corrected", "flagged", "restored"], rows)


def _write_text(path, text):
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_csv(path, header, rows):
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def persist_report(report, path, format="json"):
    """Write an ``EvalReport`` or ``CorrectionReport`` as JSON or CSV.

    JSON holds the whole report; CSV holds one row per series (evaluation) or
    per flagged point (correction) with the columns in ``report.CSV_COLUMNS``.
    """
    if format == "json":
        doc = {"kind": report.KIND, "version": 1, "report": report.to_dict()}
        _write_text(path, json.dumps(doc, indent=1) + "\n")
    elif format == "csv":
        _write_csv(path, list(report.CSV_COLUMNS), report.csv_rows())
    else:
        raise ValueError(f"unknown report format {format!r}")


def load_report(path, format="json", kind=None):
    """Inverse of :func:`persist_report`."""
    from .corrector import CorrectionReport
    from .evaluation import EvalReport

    kinds = {EvalReport.KIND: EvalReport, CorrectionReport.KIND: CorrectionReport}
    path = Path(path)
    if format == "json":
        doc = json.loads(path.read_text())
        return kinds[doc["kind"]].from_dict(doc["report"])
    if format == "csv":
        if kind not in kinds:
            raise ValueError("CSV reports need an explicit kind")
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        cls = kinds[kind]
        if rows[0] != list(cls.CSV_COLUMNS):
            raise DataFormatError(f"{path}: unexpected CSV header")
        return cls.from_csv_rows(rows[1:])
    raise ValueError(f"unknown report format {format!r}")


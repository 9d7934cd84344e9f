"""Kernel smoothing of hidden-state traces and DTW divergence.

Each trace row is the hidden vector the model produced at one training
position. Smoothing replaces every row by a Gaussian-weighted average of
the rows around it (excluding itself). The divergence between a row and its
smoothed estimate is the DTW distance between the two vectors, each read as
a sequence over its coordinates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import TraceStateError

MEDIAN = "median"
SIGMA_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class HiddenTrace:
    """Hidden states ``H`` (n, d) at series ``positions`` plus optional smoothing."""

    positions: np.ndarray
    H: np.ndarray
    H_smoothed: np.ndarray | None = None

    def __post_init__(self):
        H = np.array(self.H, dtype=np.float64)
        pos = np.array(self.positions, dtype=np.int64)
        if H.ndim != 2 or pos.shape != (H.shape[0],):
            raise ValueError("trace needs an (n, d) state matrix and n positions")
        if not np.all(np.isfinite(H)):
            raise ValueError("trace contains non-finite states")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "positions", pos)
        if self.H_smoothed is not None:
            Hs = np.array(self.H_smoothed, dtype=np.float64)
            if Hs.shape != H.shape:
                raise ValueError("smoothed states must match H in shape")
            object.__setattr__(self, "H_smoothed", Hs)

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def d(self):
        return self.H.shape[1]

    def row_of(self, position):
        """Row index holding series position ``position``."""
        hits = np.flatnonzero(self.positions == position)
        if hits.size == 0:
            raise KeyError(f"position {position} not in trace")
        return int(hits[0])


@dataclass(frozen=True)
class SmoothingConfig:
    """Neighbourhood width ``window`` (even, W/2 on each side) and bandwidth.

    ``bandwidth`` is a positive float or ``"median"`` for the per-position
    median heuristic.
    """

    window: int = 12
    bandwidth: float | str = MEDIAN

    def __post_init__(self):
        if self.window < 2 or self.window % 2:
            raise ValueError("smoothing window must be an even count >= 2")
        if self.bandwidth != MEDIAN:
            if not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
                raise ValueError("bandwidth must be positive or 'median'")

    def to_dict(self):
        return {"window": self.window, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def gaussian_kernel(h_i, h_j, sigma):
    """exp(-||h_i - h_j||^2 / (2 sigma^2))."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    h_i = np.asarray(h_i, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if h_i.shape != h_j.shape:
        raise ValueError("kernel arguments differ in length")
    diff = h_i - h_j
    return math.exp(-float(diff @ diff) / (2.0 * sigma * sigma))


def neighbours(i, n, window):
    half = window // 2
    return [j for j in range(max(0, i - half), min(n, i + half + 1)) if j != i]


def kernel_weights(H, i, cfg):
    """Normalised kernel weights of row ``i`` over its neighbours.

    Returns ``(neighbour indices, weights)``; weights are positive and sum
    to one.
    """
    H = np.asarray(H, dtype=np.float64)
    idx = np.array(neighbours(i, H.shape[0], cfg.window))
    if idx.size == 0:
        raise ValueError("position has no neighbours to smooth over")
    diff = H[idx] - H[i]
    sq = np.einsum("ij,ij->i", diff, diff)
    if cfg.bandwidth == MEDIAN:
        sigma = max(float(np.median(np.sqrt(sq))), SIGMA_FLOOR)
    else:
        sigma = float(cfg.bandwidth)
    # shifting by the smallest distance keeps at least one weight at 1
    logw = -(sq - sq.min()) / (2.0 * sigma * sigma)
    w = np.exp(logw)
    return idx, w / w.sum()


def smooth_trace(trace, cfg=SmoothingConfig()):
    """Return a copy of ``trace`` with ``H_smoothed`` filled in."""
    if trace.n < 2:
        raise ValueError("need at least two trace rows to smooth")
    H = trace.H
    out = np.empty_like(H)
    for i in range(trace.n):
        idx, w = kernel_weights(H, i, cfg)
        out[i] = w @ H[idx]
    return replace(trace, H_smoothed=out)


def dtw_distance(a, b):
    """Classic DTW with |x - y| local cost and match/insert/delete steps."""
    a = [float(x) for x in np.ravel(a)]
    b = [float(x) for x in np.ravel(b)]
    if not a or not b:
        raise ValueError("DTW needs non-empty sequences")
    inf = math.inf
    prev = [0.0] + [inf] * len(b)
    for x in a:
        cur = [inf] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(x - y) + best
        prev = cur
    return prev[-1]


def dtw_rows(A, B):
    """DTW between ``A[k]`` and ``B[k]`` for every row k.

    Same recurrence as :func:`dtw_distance`, swept over anti-diagonals so
    each step is vectorised across rows and cells.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] != B.shape[0]:
        raise ValueError("row counts differ")
    if A.shape[1] == 0 or B.shape[1] == 0:
        raise ValueError("DTW needs non-empty sequences")
    K, n = A.shape
    m = B.shape[1]
    cost = np.abs(A[:, :, None] - B[:, None, :])
    D = np.full((K, n + 1, m + 1), np.inf)
    D[:, 0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(D[:, i - 1, j - 1], D[:, i - 1, j])
        best = np.minimum(best, D[:, i, j - 1])
        D[:, i, j] = cost[:, i - 1, j - 1] + best
    return D[:, n, m].copy()


def trace_divergences(trace):
    """DTW distance between each hidden state and its smoothed estimate."""
    if trace.H_smoothed is None:
        raise TraceStateError("trace has no smoothed states; call smooth_trace first")
    return dtw_rows(trace.H_smoothed, trace.H)


def export_trace_csv(trace, path):
    """Long-format CSV: position, coordinate, h, h_smoothed, divergence."""
    div = trace_divergences(trace)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "coordinate", "h", "h_smoothed", "divergence"])
        for r in range(trace.n):
            for k in range(trace.d):
                w.writerow(
                    [
                        int(trace.positions[r]),
                        k,
                        repr(float(trace.H[r, k])),
                        repr(float(trace.H_smoothed[r, k])),
                        repr(float(div[r])),
                    ]
                )

"""Slow reference implementations used by the tests."""
import itertools
import math

import numpy as np


def warping_paths(n, m):
    """Every monotone path from (0, 0) to (n-1, m-1) with unit steps."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    yield from walk(0, 0)


def brute_dtw(a, b):
    return min(
        sum(abs(float(a[i]) - float(b[j])) for i, j in path)
        for path in warping_paths(len(a), len(b))
    )


def all_sequences(max_len, alphabet=(0, 1, 2)):
    for length in range(1, max_len + 1):
        yield from itertools.product(alphabet, repeat=length)


def loop_smooth(H, window, bandwidth="median"):
    """Direct double-loop kernel smoother."""
    n, d = len(H), len(H[0])
    half = window // 2
    out = []
    for i in range(n):
        nbrs = [j for j in range(n) if j != i and abs(j - i) <= half]
        dist = [math.sqrt(sum((H[j][k] - H[i][k]) ** 2 for k in range(d))) for j in nbrs]
        if bandwidth == "median":
            sigma = max(float(np.median(dist)), 1e-8)
        else:
            sigma = bandwidth
        kern = [math.exp(-(r * r) / (2 * sigma * sigma)) for r in dist]
        total = sum(kern)
        out.append([sum(kern[q] * H[j][k] for q, j in enumerate(nbrs)) / total for k in range(d)])
    return np.array(out)


def hand_mase(forecast, test, full, s):
    num = sum(abs(t - f) for t, f in zip(test, forecast)) / len(test)
    den = sum(abs(full[j] - full[j - 1]) for j in range(1, len(full))) / (len(full) - 1)
    return num / den


def hand_dm(ea, eb, h):
    """DM statistic from plain loops (squared-error loss)."""
    d = [x * x - y * y for x, y in zip(ea, eb)]
    T = len(d)
    mean = sum(d) / T

    def gamma(k):
        return sum((d[t] - mean) * (d[t - k] - mean) for t in range(k, T)) / T

    var = (gamma(0) + 2 * sum(gamma(k) for k in range(1, h))) / T
    return mean / math.sqrt(var)


def path_incidence(n, m):
    """(n*m, n_paths) matrix: entry 1 where a warping path visits a cell."""
    paths = list(warping_paths(n, m))
    P = np.zeros((n * m, len(paths)))
    for k, path in enumerate(paths):
        for i, j in path:
            P[i * m + j, k] = 1.0
    return P


def brute_dtw_batch(A, B):
    """Exhaustive-path DTW for rows of equal-length batches A (K, n), B (K, m)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    cost = np.abs(A[:, :, None] - B[:, None, :]).reshape(len(A), -1)
    return (cost @ path_incidence(A.shape[1], B.shape[1])).min(axis=1)


def extended_window_loss(theta, d, inputs, target):
    """Squared error of one scalar-input window, computed in extended precision.

    Independent of the package code: ``theta`` is the flat parameter vector
    (W, V, b, w_out, b_out with gates ordered i, o, f, c) and every operation
    runs in ``np.longdouble`` so central differences are not dominated by
    float64 rounding.
    """
    ld = np.longdouble
    theta = np.asarray(theta, dtype=ld)
    W = theta[: 4 * d * d].reshape(4, d, d)
    V = theta[4 * d * d : 4 * d * d + 4 * d].reshape(4, d)
    b = theta[4 * d * d + 4 * d : 4 * d * d + 8 * d].reshape(4, d)
    w_out = theta[4 * d * d + 8 * d : 4 * d * d + 9 * d]
    b_out = theta[-1]

    def sig(z):
        return ld(1) / (ld(1) + np.exp(-z))

    h = np.zeros(d, dtype=ld)
    c = np.zeros(d, dtype=ld)
    for x in inputs:
        x = ld(x)
        pre = [W[k] @ h + V[k] * x + b[k] for k in range(4)]
        i, o, f, g = sig(pre[0]), sig(pre[1]), sig(pre[2]), np.tanh(pre[3])
        c = i * g + f * c
        h = o * np.tanh(c)
    return (h @ w_out + b_out - ld(target)) ** 2


def extended_central_difference(theta, d, inputs, target, eps):
    ld = np.longdouble
    theta = np.asarray(theta, dtype=ld)
    out = np.empty(theta.size, dtype=ld)
    for k in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[k] += ld(eps)
        dn[k] -= ld(eps)
        out[k] = (extended_window_loss(up, d, inputs, target)
                  - extended_window_loss(dn, d, inputs, target)) / (2 * ld(eps))
    return out

"""Degree-of-independence scores for two univariate samples.

Both scores live in [0, 1] and grow with independence, so inference rules
can use either one interchangeably:

* ``"dcor"``: 1 - distance correlation (V-statistic, Szekely et al.).
* ``"hsic"``: p-value of the HSIC test with Gaussian kernels and
  median-heuristic bandwidths (gamma approximation by default).
"""
from __future__ import annotations

import enum

import numpy as np
from scipy import stats

NAIVE_DCOR_MAX_N = 1024
MEDIAN_SUBSAMPLE = 2000


class DindepKind(str, enum.Enum):
    DCOR_COMPLEMENT = "dcor"
    HSIC_PVALUE = "hsic"


def _as_vector(x, name):
    v = np.asarray(x, dtype=float).ravel()
    if v.size < 2:
        raise ValueError(f"{name} needs at least 2 samples")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def _double_centered(v):
    d = np.abs(v[:, None] - v[None, :])
    return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()


def _dcov2_naive(x, y):
    A = _double_centered(x)
    B = _double_centered(y)
    return (A * B).mean(), (A * A).mean(), (B * B).mean()


def _row_sums_abs_diff(v):
    """sum_j |v_i - v_j| for every i, via sorting."""
    n = v.size
    order = np.argsort(v, kind="stable")
    s = v[order]
    prefix = np.concatenate(([0.0], np.cumsum(s)[:-1]))
    total = s.sum()
    k = np.arange(n)
    sums = s * k - prefix + (total - prefix - s) - s * (n - k - 1)
    out = np.empty(n)
    out[order] = sums
    return out


def _dcov2_chunked(x, y, chunk=512):
    # O(n^2) time, O(n * chunk) memory
    n = x.size
    ax, ay = _row_sums_abs_diff(x), _row_sums_abs_diff(y)
    cross = 0.0
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        cross += np.sum(np.abs(x[sl, None] - x[None, :]) * np.abs(y[sl, None] - y[None, :]))

    def combine(sum_ab, ra, rb):
        return sum_ab / n**2 - 2.0 * np.dot(ra, rb) / n**3 + ra.sum() * rb.sum() / n**4

    def self_sq(v):
        c = v - v.mean()
        return 2.0 * n * np.dot(c, c)

    return (combine(cross, ax, ay), combine(self_sq(x), ax, ax), combine(self_sq(y), ay, ay))


def dcor(x, y, full_output: bool = False, method: str = "auto"):
    """Sample distance correlation in [0, 1].

    A constant argument makes the denominator vanish; the result is then 0
    and, with ``full_output=True``, the degenerate flag is set.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return (0.0, True) if full_output else 0.0
    if method == "auto":
        method = "naive" if x.size <= NAIVE_DCOR_MAX_N else "chunked"
    if method == "naive":
        dxy, dxx, dyy = _dcov2_naive(x, y)
    elif method == "chunked":
        dxy, dxx, dyy = _dcov2_chunked(x, y)
    else:
        raise ValueError(f"unknown dcor method {method!r}")
    value = float(np.sqrt(np.clip(dxy / np.sqrt(dxx * dyy), 0.0, 1.0)))
    return (value, False) if full_output else value


def _standardize(v):
    s = v.std()
    return (v - v.mean()) / s if s > 0 else v - v.mean()


def median_bandwidth(v, seed: int = 0):
    """Median pairwise distance; falls back to 1.0 when all values coincide."""
    if v.size > MEDIAN_SUBSAMPLE:
        v = np.random.default_rng(seed).choice(v, MEDIAN_SUBSAMPLE, replace=False)
    d = np.abs(v[:, None] - v[None, :])[np.triu_indices(v.size, k=1)]
    med = np.median(d)
    if not med > 0:
        return 1.0, True
    return float(med), False


def _centered_gram(v, seed):
    v = _standardize(v)
    sigma, degenerate = median_bandwidth(v, seed)
    K = np.exp(-(v[:, None] - v[None, :]) ** 2 / (2.0 * sigma**2))
    Kc = K - K.mean(axis=0) - K.mean(axis=1)[:, None] + K.mean()
    return K, Kc, degenerate


def _check_pair(x, y, min_n):
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if x.size < min_n:
        raise ValueError(f"need at least {min_n} samples, got {x.size}")
    return x, y


def hsic(x, y, full_output: bool = False, seed: int = 0):
    """Biased HSIC statistic (1/n^2) tr(K H L H)."""
    x, y = _check_pair(x, y, 4)
    _, Kc, dx = _centered_gram(x, seed)
    _, Lc, dy = _centered_gram(y, seed)
    stat = float(np.sum(Kc * Lc) / x.size**2)
    return (stat, dx or dy) if full_output else stat


def _gamma_pvalue(K, Kc, L, Lc):
    n = K.shape[0]
    test_stat = np.sum(Kc * Lc) / n
    v = (Kc * Lc / 6.0) ** 2
    var = (v.sum() - np.trace(v)) / n / (n - 1)
    var *= 72.0 * (n - 4) * (n - 5) / n / (n - 1) / (n - 2) / (n - 3)
    mu_x = (K.sum() - np.trace(K)) / n / (n - 1)
    mu_y = (L.sum() - np.trace(L)) / n / (n - 1)
    mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / n
    if not (var > 0 and mean > 0):
        return 1.0
    shape = mean**2 / var
    scale = var * n / mean
    return float(stats.gamma.sf(test_stat, shape, scale=scale))


def hsic_pvalue(x, y, mode: str = "gamma", n_permutations: int = 1000, seed: int = 0) -> float:
    """p-value of the HSIC independence test.

    ``mode="gamma"`` fits a gamma law to the null through its estimated mean
    and variance (needs n >= 20); ``mode="permutation"`` shuffles y
    ``n_permutations`` times with a seeded generator.
    """
    if mode == "gamma":
        x, y = _check_pair(x, y, 20)
        K, Kc, _ = _centered_gram(x, seed)
        L, Lc, _ = _centered_gram(y, seed)
        return _gamma_pvalue(K, Kc, L, Lc)
    if mode == "permutation":
        if n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")
        x, y = _check_pair(x, y, 4)
        _, Kc, _ = _centered_gram(x, seed)
        _, Lc, _ = _centered_gram(y, seed)
        observed = np.sum(Kc * Lc)
        rng = np.random.default_rng(seed)
        exceed = 0
        for _ in range(n_permutations):
            p = rng.permutation(x.size)
            exceed += np.sum(Kc * Lc[np.ix_(p, p)]) >= observed - 1e-12 * abs(observed)
        return (1.0 + exceed) / (1.0 + n_permutations)
    raise ValueError(f"unknown HSIC p-value mode {mode!r}")


def dindep(x, y, kind=DindepKind.DCOR_COMPLEMENT) -> float:
    kind = DindepKind(kind)
    if kind is DindepKind.DCOR_COMPLEMENT:
        return 1.0 - dcor(x, y)
    return hsic_pvalue(x, y)

"""Chain diagnostics: autocorrelation, correlation length and multi-chain convergence.

Convergence across trans-dimensional chains is judged through scalar
summaries that do not depend on the number of individuals: for a reference
point ``v`` the distance from ``v`` to the nearest individual of a species.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "DiagnosticsError",
    "acf",
    "acf_all",
    "correlation_length",
    "min_distance_scalar",
    "min_distance_series",
    "empirical_cmf",
    "cmf_grid",
    "pairwise_u",
    "mc_test_w",
    "psrf",
    "psrf_per_ref",
    "select_reference_points",
    "ChainScalars",
    "chain_scalars",
]


class DiagnosticsError(ValueError):
    pass


def _centered(series):
    x = np.asarray(series, dtype=float).reshape(-1)
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if not denom > 0:
        raise DiagnosticsError("autocorrelation of a constant series is undefined")
    return d, denom


def acf(series, delta: int) -> float:
    """Normalized autocorrelation at lag ``delta`` with the ``N / (N - delta)`` prefactor."""
    d, denom = _centered(series)
    n = len(d)
    if not 0 <= delta < n:
        raise DiagnosticsError(f"lag {delta} outside [0, {n})")
    return n / (n - delta) * float(np.dot(d[: n - delta], d[delta:])) / denom


def acf_all(series, max_lag: int | None = None) -> np.ndarray:
    """``acf`` at lags ``0..max_lag`` via FFT."""
    d, denom = _centered(series)
    n = len(d)
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    raw = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    lags = np.arange(max_lag + 1)
    return n / (n - lags) * raw / denom


def correlation_length(series, n_zeros: int = 5) -> tuple[int, bool]:
    """Lag of the ``n_zeros``-th sign change of the autocorrelation.

    Returns ``(length, warned)``; when fewer sign changes exist the series
    length is returned with ``warned=True``.
    """
    n = len(series)
    max_lag = min(n - 1, 4096)
    while True:
        a = acf_all(series, max_lag)
        sign = np.sign(a)
        # an exact zero counts once, as does a strict sign flip
        change = np.flatnonzero((sign[1:] == 0) | (sign[1:] * sign[:-1] < 0)) + 1
        if len(change) >= n_zeros:
            return int(change[n_zeros - 1]), False
        if max_lag >= n - 1:
            warnings.warn(f"fewer than {n_zeros} zeros of the autocorrelation; using the series length",
                          RuntimeWarning, stacklevel=2)
            return n, True
        max_lag = min(n - 1, 4 * max_lag)


# ---------------------------------------------------------------------------
# min-distance scalars
# ---------------------------------------------------------------------------


def min_distance_scalar(values, v) -> float:
    """Euclidean distance from ``v`` to the nearest row of ``values``; ``inf`` when empty."""
    values = np.asarray(values, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    if values.size == 0:
        return math.inf
    values = values.reshape(-1, values.shape[-1])
    if values.shape[1] != v.size:
        raise DiagnosticsError(f"dimension mismatch: individuals have {values.shape[1]}, reference {v.size}")
    return float(np.sqrt(np.min(np.sum((values - v) ** 2, axis=1))))


def min_distance_series(populations, refs) -> np.ndarray:
    """``(n_refs, n_samples)`` min distances for a sequence of populations."""
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    pops = list(populations)
    out = np.full((len(refs), len(pops)), math.inf)
    for m, vals in enumerate(pops):
        vals = np.asarray(vals, dtype=float)
        if vals.size == 0:
            continue
        d2 = np.sum((vals[None, :, :] - refs[:, None, :]) ** 2, axis=2)
        out[:, m] = np.sqrt(d2.min(axis=1))
    return out


def empirical_cmf(x, threshold) -> float | np.ndarray:
    """Fraction of ``x`` at or below ``threshold`` (array thresholds allowed)."""
    x = np.sort(np.asarray(x, dtype=float).reshape(-1))
    if x.size == 0:
        raise DiagnosticsError("empirical CMF of an empty sample")
    out = np.searchsorted(x, threshold, side="right") / x.size
    return float(out) if np.ndim(out) == 0 else out


def cmf_grid(chains_x, n_grid: int = 256) -> np.ndarray:
    """Shared threshold grid spanning the finite pooled values."""
    pooled = np.concatenate([np.asarray(c, dtype=float).reshape(-1) for c in chains_x])
    finite = pooled[np.isfinite(pooled)]
    if finite.size == 0:
        return np.zeros(n_grid)
    return np.linspace(finite.min(), finite.max(), n_grid)


def _lp(diff, p):
    diff = np.abs(diff)
    if math.isinf(p):
        return float(diff.max())
    return float(np.mean(diff ** p) ** (1.0 / p))


def _cmfs(x, n_grid):
    """``(C, n_refs, n_grid)`` CMFs from ``x`` of shape ``(C, n_refs, n_samples)``."""
    C, R, _ = x.shape
    out = np.empty((C, R, n_grid))
    for r in range(R):
        grid = cmf_grid(x[:, r, :], n_grid)
        for c in range(C):
            out[c, r] = empirical_cmf(x[c, r], grid)
    return out


def _check_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[0] < 2:
        raise DiagnosticsError("need at least two chains of equal length")
    return x


def pairwise_u(x, p: float = 1.0, n_grid: int = 256) -> float:
    """Average over chain pairs of the reference-averaged ``L^p`` CMF distance.

    ``x`` has shape ``(C, n_refs, n_samples)`` (or ``(C, n_samples)`` for a
    single reference).  The ``L^p`` norm is the power mean over the grid.
    """
    x = _check_chains(x)
    F = _cmfs(x, n_grid)
    C, R = F.shape[:2]
    total = 0.0
    for c1, c2 in combinations(range(C), 2):
        total += np.mean([_lp(F[c1, r] - F[c2, r], p) for r in range(R)])
    return float(total / math.comb(C, 2))


def mc_test_w(x, p: float = 1.0, n_grid: int = 256) -> np.ndarray:
    """Per chain: reference-averaged distance of its CMF to the mean CMF of the other chains."""
    x = _check_chains(x)
    F = _cmfs(x, n_grid)
    C, R = F.shape[:2]
    out = np.empty(C)
    for c in range(C):
        # mean of the differences rather than difference of the mean: exact zeros for equal CMFs
        gap = (F[c][None] - np.delete(F, c, axis=0)).mean(axis=0)
        out[c] = np.mean([_lp(gap[r], p) for r in range(R)])
    return out


def _fill_infinite(x):
    """Empty populations give infinite distances; replace them by the pooled finite maximum per reference."""
    x = np.array(x, dtype=float)
    for r in range(x.shape[1]):
        block = x[:, r, :]
        bad = ~np.isfinite(block)
        if bad.any():
            finite = block[~bad]
            block[bad] = finite.max() if finite.size else 0.0
    return x


def psrf_per_ref(x) -> np.ndarray:
    """Potential scale reduction factor for every reference, ``x`` shaped ``(C, n_refs, n_samples)``."""
    x = _fill_infinite(_check_chains(x))
    C, R, n = x.shape
    if n < 2:
        raise DiagnosticsError("PSRF needs at least two samples per chain")
    means = x.mean(axis=2)  # (C, R)
    grand = means.mean(axis=0)
    B = n / (C - 1) * np.sum((means - grand) ** 2, axis=0)
    B[np.all(means == means[0], axis=0)] = 0.0  # guard against rounding in the grand mean
    s2 = np.sum((x - means[:, :, None]) ** 2, axis=2) / (n - 1)
    W = s2.mean(axis=0)
    if np.any(W <= 0):
        raise DiagnosticsError("zero within-chain variance at a reference point")
    return np.sqrt((n - 1) / n + B / (n * W))


def psrf(x) -> float:
    """Maximum PSRF over reference points."""
    return float(np.max(psrf_per_ref(x)))


# ---------------------------------------------------------------------------
# working from stores
# ---------------------------------------------------------------------------


def select_reference_points(pooled_values, n_refs: int = 100, seed: int | None = 0) -> np.ndarray:
    """Draw ``n_refs`` individuals uniformly from the pooled individuals (with replacement if too few)."""
    pooled = np.asarray(pooled_values, dtype=float)
    if len(pooled) == 0:
        raise DiagnosticsError("no individuals to draw reference points from")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pooled), size=n_refs, replace=len(pooled) < n_refs)
    return pooled[idx]


@dataclass
class ChainScalars:
    """Thinned min-distance scalars of several chains for one species."""

    refs: np.ndarray
    x: np.ndarray  # (C, n_refs, n_samples)
    generations: list


def chain_scalars(stores, alpha: int = 0, n_refs: int = 100, seed: int | None = 0,
                  burn_in: float = 0.1, stride: int | None = None) -> ChainScalars:
    """Min-distance scalars of species ``alpha`` over equally thinned, burned-in chains.

    The stride defaults to the largest log-target correlation length among
    the chains so every chain contributes the same number of samples.
    """
    from .postprocess import thinned_generations

    if len(stores) < 2:
        raise DiagnosticsError("need at least two chains")
    if stride is None:
        stride = max(correlation_length_of_store(s) for s in stores)
    gens = [thinned_generations(s, burn_in, stride) for s in stores]
    n = min(len(g) for g in gens)
    gens = [g[-n:] for g in gens]
    pops = [list(s.iter_populations(alpha, g)) for s, g in zip(stores, gens)]
    pooled = np.concatenate([np.concatenate(p) if any(len(v) for v in p) else np.empty((0, len(s.param_names[alpha])))
                             for p, s in zip(pops, stores)])
    refs = select_reference_points(pooled, n_refs, seed)
    x = np.stack([min_distance_series(p, refs) for p in pops])
    return ChainScalars(refs, x, gens)


def correlation_length_of_store(store, burn_in: float = 0.1) -> int:
    lt = store.log_target[int(burn_in * (store.n_gen + 1)):]
    if len(lt) < 3 or np.ptp(lt) == 0:
        return 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        length, _ = correlation_length(lt)
    return max(1, int(length))

"""Waiting-time-weighted estimators and summaries of a finished chain.

Every sample ``y_i`` carries the expected dwell time ``tau_i`` of its state;
expectations are ``sum tau_i f(y_i) / sum tau_i``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .diagnostics import correlation_length_of_store

__all__ = [
    "PostprocessError",
    "WeightedSamples",
    "thinned_generations",
    "rb_estimate",
    "sampled_dwell_estimate",
    "number_posterior",
    "Histogram",
    "parameter_distribution",
    "weighted_quantiles",
    "signal_band",
    "mixture_density_band",
    "export_for_catalog",
    "write_number_pmf_csv",
    "write_histogram_csv",
    "write_band_csv",
    "write_catalog_json",
    "summarize",
]

DEFAULT_BURN_IN = 0.1


class PostprocessError(ValueError):
    pass


def thinned_generations(store, burn_in: float = DEFAULT_BURN_IN, stride: int | None = 1) -> np.ndarray:
    """Generations kept after dropping the first ``burn_in`` fraction and thinning by ``stride``.

    ``stride=None`` uses the correlation length of the log target.
    """
    if not 0.0 <= burn_in < 1.0:
        raise PostprocessError("burn_in must lie in [0, 1)")
    if stride is None:
        stride = correlation_length_of_store(store, burn_in)
    if stride < 1:
        raise PostprocessError("stride must be at least 1")
    start = int(burn_in * (store.n_gen + 1))
    return np.arange(start, store.n_gen + 1, stride, dtype=np.int64)


@dataclass
class WeightedSamples:
    """A store restricted to selected generations, with their waiting times."""

    store: object
    generations: np.ndarray
    tau: np.ndarray

    @classmethod
    def from_store(cls, store, burn_in: float = DEFAULT_BURN_IN, stride: int | None = None):
        gens = thinned_generations(store, burn_in, stride)
        if len(gens) == 0:
            raise PostprocessError("no samples left after burn-in and thinning")
        tau = store.tau[gens]
        # states left at an overwhelming rate have waiting times that underflow to 0
        if not np.all(np.isfinite(tau)) or np.any(tau < 0) or not tau.sum() > 0:
            raise PostprocessError("waiting times must be finite, nonnegative and not all zero")
        return cls(store, gens, tau)

    def __len__(self):
        return len(self.generations)

    def counts(self, alpha: int) -> np.ndarray:
        return self.store.counts()[self.generations, alpha]

    def societies(self):
        for g in self.generations:
            yield self.store.society_at(int(g))


def rb_estimate(samples, f, tau=None) -> float:
    """Waiting-time weighted mean of ``f``.

    ``samples`` is a :class:`WeightedSamples` with ``f`` a callable of a
    society, or an array of ``f`` values with ``tau`` given.
    """
    if isinstance(samples, WeightedSamples):
        tau = samples.tau
        values = np.array([f(s) for s in samples.societies()], dtype=float) if callable(f) else np.asarray(f, float)
    else:
        values = np.asarray(samples if tau is not None else f, dtype=float)
        tau = np.asarray(tau if tau is not None else np.ones_like(values), dtype=float)
    if values.size == 0:
        raise PostprocessError("no samples")
    if values.shape[0] != tau.shape[0]:
        raise PostprocessError("one waiting time per sample is required")
    w = tau / tau.sum()
    return float(np.tensordot(w, values, axes=(0, 0)))


def sampled_dwell_estimate(values, tau, rng: np.random.Generator) -> float:
    """Weighted mean with dwell times drawn as ``Exp(tau)`` instead of their expectation."""
    tau = np.asarray(tau, dtype=float)
    return rb_estimate(values, None, rng.exponential(tau))


def number_posterior(samples, alpha: int = 0, tau=None) -> dict[int, float]:
    """``p(N) = sum tau_i 1{N_i = N} / sum tau_i`` over the observed counts."""
    if isinstance(samples, WeightedSamples):
        counts, tau = samples.counts(alpha), samples.tau
    else:
        counts = np.asarray(samples, dtype=np.int64)
        tau = np.ones(len(counts)) if tau is None else np.asarray(tau, dtype=float)
    if len(counts) == 0:
        raise PostprocessError("no samples")
    mass = np.bincount(counts, weights=tau)
    mass = mass / mass.sum()
    return {int(n): float(mass[n]) for n in np.flatnonzero(np.bincount(counts))}


@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray
    empty: bool = False


def parameter_distribution(samples: WeightedSamples, alpha: int, param_idx: int, bins=50, range=None) -> Histogram:
    """Histogram of one parameter over all individuals, each weighted by its sample's ``tau``."""
    values, weights = samples.store.weighted_individuals(alpha, samples.generations, samples.tau)
    return weighted_histogram(values[:, param_idx] if len(values) else np.empty(0), weights, bins, range)


def weighted_histogram(x, weights, bins=50, range=None) -> Histogram:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        edges = np.histogram_bin_edges(np.empty(0), bins if np.ndim(bins) else bins, range=range or (0.0, 1.0))
        return Histogram(edges, np.zeros(len(edges) - 1), True)
    mass, edges = np.histogram(x, bins=bins, range=range, weights=weights)
    total = mass.sum()
    return Histogram(edges, mass / total if total > 0 else mass, total <= 0)


def weighted_quantiles(values, weights, quantiles) -> np.ndarray:
    """Column-wise weighted quantiles of ``values`` (shape ``(S, T)``); result ``(len(quantiles), T)``.

    The ``q`` quantile is the smallest value whose cumulative weight reaches ``q``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    w = np.asarray(weights, dtype=float)
    order = np.argsort(values, axis=0, kind="stable")
    sv = np.take_along_axis(values, order, axis=0)
    cw = np.cumsum(w[order], axis=0)
    cw /= cw[-1:]
    out = np.empty((len(quantiles), values.shape[1]))
    cols = np.arange(values.shape[1])
    for k, q in enumerate(quantiles):
        idx = (cw < q - 1e-12).sum(axis=0)
        out[k] = sv[np.minimum(idx, len(sv) - 1), cols]
    return out


def signal_band(samples: WeightedSamples, alpha: int, times, quantiles=(0.05, 0.5, 0.95), template=None) -> np.ndarray:
    """Per-time weighted quantiles of the summed signal of species ``alpha``.

    ``template(times, theta)`` defaults to the one declared on the species.
    """
    store = samples.store
    if template is None:
        specs = getattr(store, "specs", None)
        template = getattr(specs[alpha], "template", None) if specs else None
    if template is None:
        raise PostprocessError(f"species {alpha} has no signal template")
    times = np.asarray(times, dtype=float)
    curves = np.zeros((len(samples), len(times)))
    for m, vals in enumerate(store.iter_populations(alpha, samples.generations)):
        for theta in vals:
            curves[m] += template(times, theta)
    return weighted_quantiles(curves, samples.tau, quantiles)


def mixture_density_band(samples: WeightedSamples, alpha: int, grid, quantiles=(0.05, 0.5, 0.95)) -> np.ndarray:
    """Per-point weighted quantiles of the 1-D mixture density ``sum_i w_i N(x | mu_i, var_i)``."""
    grid = np.asarray(grid, dtype=float)
    curves = np.zeros((len(samples), len(grid)))
    for m, vals in enumerate(samples.store.iter_populations(alpha, samples.generations)):
        vals = np.asarray(vals, dtype=float)
        if len(vals):
            w, mu, var = vals[:, 0:1], vals[:, 1:2], vals[:, 2:3]
            curves[m] = np.sum(w * np.exp(-0.5 * (grid - mu) ** 2 / var) / np.sqrt(2 * np.pi * var), axis=0)
    return weighted_quantiles(curves, samples.tau, quantiles)


def export_for_catalog(samples: WeightedSamples, alpha: int = 0) -> list[list[tuple[int, np.ndarray]]]:
    """Reorder samples into per-label catalogs ``[label][k] = (generation, theta)``.

    Labels follow storage rows: a new row takes the lowest free label and
    keeps it while alive.  This is a bookkeeping labeling, not a statistical
    relabeling of exchangeable individuals.
    """
    catalogs: list[list[tuple[int, np.ndarray]]] = []
    label_of: dict[int, int] = {}
    for g, (rows, vals) in zip(samples.generations, samples.store.iter_rows(alpha, samples.generations)):
        current = set(int(r) for r in rows)
        label_of = {r: l for r, l in label_of.items() if r in current}
        used = set(label_of.values())
        free = (l for l in range(len(rows) + len(used) + 1) if l not in used)
        for r, theta in zip(rows, vals):
            r = int(r)
            if r not in label_of:
                label_of[r] = next(free)
            lab = label_of[r]
            while len(catalogs) <= lab:
                catalogs.append([])
            catalogs[lab].append((int(g), np.array(theta)))
    return catalogs


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_number_pmf_csv(path, pmf: dict[int, float]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "probability"])
        for n in sorted(pmf):
            w.writerow([n, repr(pmf[n])])


def write_histogram_csv(path, hist: Histogram):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["left", "right", "mass"])
        for lo, hi, m in zip(hist.edges[:-1], hist.edges[1:], hist.mass):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])


def write_band_csv(path, times, band):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "q05", "q50", "q95"])
        for t, row in zip(times, np.asarray(band).T):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_catalog_json(path, catalogs, param_names):
    out = {
        "labeling": "storage-row order; not a statistical relabeling",
        "param_names": list(param_names),
        "catalogs": [
            {"label": k, "generations": [g for g, _ in cat], "values": [list(map(float, v)) for _, v in cat]}
            for k, cat in enumerate(catalogs)
        ],
    }
    with open(path, "w") as fh:
        json.dump(out, fh)


def summarize(store, alpha_names=None, burn_in: float = DEFAULT_BURN_IN, stride: int | None = None) -> dict:
    """JSON-ready summary: counts pmf and mean count per species."""
    samples = WeightedSamples.from_store(store, burn_in, stride)
    out = {"n_gen": store.n_gen, "n_samples": len(samples), "stride": int(samples.generations[1] - samples.generations[0])
           if len(samples) > 1 else 1, "burn_in": burn_in, "species": {}}
    for a, name in enumerate(store.species_names):
        pmf = number_posterior(samples, a)
        out["species"][name] = {
            "number_pmf": {str(k): v for k, v in pmf.items()},
            "mean_count": rb_estimate(samples.counts(a).astype(float), None, samples.tau),
            "mode_count": max(pmf, key=pmf.get),
        }
    out["mean_log_target"] = rb_estimate(store.log_target[samples.generations], None, samples.tau)
    return out


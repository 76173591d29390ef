"""Target log-densities.

A target maps a :class:`~samsara.model.Society` to its unnormalized log
posterior.  Beyond ``log_density`` every target hands out an *evaluator*
bound to one society; evaluators answer the ratio queries the rate
computation needs (remove one individual, add one, replace one) and produce
the evaluator of the successor state.  The generic evaluator recomputes from
scratch, the built-in ones cache per-individual terms.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .model import (
    ModelError,
    Society,
    clone_with_birth,
    clone_with_death,
    clone_with_mutation,
    clone_with_values,
    log_prior,
)

__all__ = [
    "Dataset",
    "AnalyticTargetConfig",
    "Target",
    "AnalyticTarget",
    "TimeseriesTarget",
    "GMMTarget",
    "sine_template",
    "lorentzian_template",
    "analytic_log_density",
    "timeseries_log_likelihood",
    "gmm_log_likelihood",
    "log_target",
]

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    kind: str = "none"
    times: np.ndarray | None = None
    values: np.ndarray | None = None
    noise_variance: float | None = None
    points: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "timeseries":
            t = np.asarray(self.times, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
                raise ModelError("timeseries needs matching 1-D times and values")
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise ModelError("timeseries times must be strictly increasing")
            if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
                raise ModelError("timeseries cadence must be uniform")
            if self.noise_variance is None or not self.noise_variance > 0:
                raise ModelError("timeseries needs noise_variance > 0")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", v)
        elif self.kind == "samples":
            p = np.asarray(self.points, dtype=float)
            if p.ndim == 1:
                p = p[:, None]
            if len(p) < 1:
                raise ModelError("samples dataset needs at least one point")
            object.__setattr__(self, "points", p)
        elif self.kind != "none":
            raise ModelError(f"unknown dataset kind {self.kind!r}")

    @property
    def cadence(self) -> float:
        return float(self.times[1] - self.times[0])

    @classmethod
    def timeseries(cls, times, values, noise_variance):
        return cls("timeseries", times=times, values=values, noise_variance=float(noise_variance))

    @classmethod
    def samples(cls, points):
        return cls("samples", points=points)

    @classmethod
    def from_csv(cls, path, kind: str, noise_variance: float | None = None):
        """Load ``t,value`` rows (timeseries) or one datum per row (samples); header optional."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(x) for x in row])
                except ValueError:
                    if rows:
                        raise
                    continue  # header
        arr = np.array(rows, dtype=float)
        if kind == "timeseries":
            return cls.timeseries(arr[:, 0], arr[:, 1], noise_variance)
        if kind == "samples":
            return cls.samples(arr)
        raise ModelError(f"cannot load dataset kind {kind!r} from csv")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.kind == "timeseries":
                w.writerow(["t", "value"])
                for t, v in zip(self.times, self.values):
                    w.writerow([repr(float(t)), repr(float(v))])
            elif self.kind == "samples":
                w.writerow([f"x{i}" for i in range(self.points.shape[1])])
                for row in self.points:
                    w.writerow([repr(float(x)) for x in row])
            else:
                raise ModelError("nothing to write for an empty dataset")


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def sine_template(t, theta):
    """Chirping sinusoid; ``theta = (log A, log f, log fdot, phase)``."""
    log_amp, log_f, log_fdot, phase = theta
    t = np.asarray(t, dtype=float)
    return math.exp(log_amp) * np.cos(2.0 * math.pi * math.exp(log_f) * t + math.pi * math.exp(log_fdot) * t * t + phase)


def lorentzian_template(t, theta):
    """Lorentzian bump ``A / (1 + ((t - t0)/w)^2)``; ``theta = (A, w, t0)``."""
    amp, width, t0 = theta
    if width == 0:
        raise ModelError("lorentzian width must be nonzero")
    x = (np.asarray(t, dtype=float) - t0) / width
    return amp / (1.0 + x * x)


TEMPLATES = {"sine": sine_template, "lorentzian": lorentzian_template}


# ---------------------------------------------------------------------------
# base classes
# ---------------------------------------------------------------------------


class Target:
    """Unnormalized log posterior over societies."""

    data_kind = "none"

    def __init__(self, data: Dataset | None = None):
        data = data if data is not None else Dataset()
        if data.kind != self.data_kind:
            raise ModelError(f"{type(self).__name__} needs a {self.data_kind!r} dataset, got {data.kind!r}")
        self.data = data

    def log_likelihood(self, society: Society) -> float:
        raise NotImplementedError

    def log_density(self, society: Society) -> float:
        lp = log_prior(society)
        if lp == -math.inf:
            return -math.inf
        return lp + self.log_likelihood(society)

    def evaluator(self, society: Society) -> "Evaluator":
        return Evaluator(self, society)


class Evaluator:
    """Log-density ratios around one society, by full recomputation."""

    def __init__(self, target: Target, society: Society, log_density: float | None = None):
        self.target = target
        self.society = society
        self.log_density = target.log_density(society) if log_density is None else log_density

    def death_log_ratios(self, alpha: int) -> np.ndarray:
        """``log p(y minus j) - log p(y)`` for every individual ``j`` of species ``alpha``."""
        n = len(self.society[alpha])
        out = np.empty(n)
        for j in range(n):
            out[j] = self.target.log_density(clone_with_death(self.society, alpha, j)) - self.log_density
        return out

    def birth_log_ratio(self, alpha: int, theta) -> float:
        return self.target.log_density(clone_with_birth(self.society, alpha, theta)) - self.log_density

    def mutation_log_ratio(self, alpha: int, j: int, theta) -> float:
        return self.target.log_density(clone_with_mutation(self.society, alpha, j, theta)) - self.log_density

    def after_birth(self, alpha, theta, log_ratio=None):
        soc = clone_with_birth(self.society, alpha, theta)
        return type(self)(self.target, soc, None if log_ratio is None else self.log_density + log_ratio)

    def after_death(self, alpha, j, log_ratio=None):
        soc = clone_with_death(self.society, alpha, j)
        return type(self)(self.target, soc, None if log_ratio is None else self.log_density + log_ratio)

    def after_mutation(self, alpha, j, theta, log_ratio=None):
        soc = clone_with_mutation(self.society, alpha, j, theta)
        return type(self)(self.target, soc, None if log_ratio is None else self.log_density + log_ratio)

    def after_replace(self, alpha, values):
        return self.target.evaluator(clone_with_values(self.society, alpha, values))


class FunctionTarget(Target):
    """Wraps a plain ``log_density(society)`` callable (tests, custom problems)."""

    def __init__(self, fn, data: Dataset | None = None):
        self.data_kind = (data or Dataset()).kind
        super().__init__(data)
        self._fn = fn

    def log_density(self, society):
        return float(self._fn(society))


# ---------------------------------------------------------------------------
# analytic trans-dimensional mixture
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnalyticTargetConfig:
    nbar: float = 5.0
    weights: tuple = (8 / 18, 4 / 18, 6 / 18)
    means: tuple = ((-3.0, 0.0), (-1.5, -3.0), (0.0, 1.0))
    covs: tuple = (((0.2, 0.0), (0.0, 0.2)), ((1.3, 0.0), (0.0, 0.01)), ((1.0, 0.5), (0.5, 1.0)))

    def __post_init__(self):
        if not self.nbar > 0:
            raise ModelError("nbar must be positive")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ModelError("mixture weights must be positive and sum to 1")
        for cov in self.covs:
            c = np.asarray(cov, dtype=float)
            if not np.allclose(c, c.T) or np.any(np.linalg.eigvalsh(c) <= 0):
                raise ModelError("mixture covariances must be symmetric positive definite")

    def components(self):
        """``(log_weight, mean, precision, log_norm)`` per component."""
        out = []
        for w, m, c in zip(self.weights, self.means, self.covs):
            c = np.asarray(c, dtype=float)
            _, logdet = np.linalg.slogdet(c)
            log_norm = -0.5 * (len(c) * math.log(2 * math.pi) + logdet)
            out.append((math.log(w), np.asarray(m, dtype=float), np.linalg.inv(c), log_norm))
        return out


def _mixture_logpdf(cfg: AnalyticTargetConfig, comps, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    terms = np.empty((len(comps), len(x)))
    for i, (lw, m, prec, ln) in enumerate(comps):
        d = x - m
        terms[i] = lw + ln - 0.5 * np.einsum("ij,jk,ik->i", d, prec, d)
    top = terms.max(axis=0)
    return top + np.log(np.exp(terms - top).sum(axis=0))


def analytic_log_density(society: Society, cfg: AnalyticTargetConfig, species: int = 0) -> float:
    """Poisson log pmf of the population size plus the summed log mixture density."""
    pop = society[species]
    n = len(pop)
    out = float(stats.poisson.logpmf(n, cfg.nbar))
    if n:
        out += float(np.sum(_mixture_logpdf(cfg, cfg.components(), pop.values)))
    return out


class AnalyticTarget(Target):
    """The analytic density itself is the target; priors enter only via their support."""

    def __init__(self, cfg: AnalyticTargetConfig | None = None, species: int = 0):
        super().__init__(None)
        self.cfg = cfg or AnalyticTargetConfig()
        self.species = species
        self._comps = self.cfg.components()
        self._log_nbar = math.log(self.cfg.nbar)
        self._log_poisson0 = -self.cfg.nbar

    def log_point(self, theta: np.ndarray) -> np.ndarray:
        return _mixture_logpdf(self.cfg, self._comps, theta)

    def _log_poisson(self, n):
        return self._log_poisson0 + n * self._log_nbar - math.lgamma(n + 1)

    def log_likelihood(self, society):
        return analytic_log_density(society, self.cfg, self.species)

    def log_density(self, society):
        pop = society[self.species]
        prior = pop.species.prior
        if len(pop) and not np.all(prior.in_support(pop.values)):
            return -math.inf
        n = len(pop)
        out = self._log_poisson(n)
        if n:
            out += float(np.sum(self.log_point(pop.values)))
        return out

    def evaluator(self, society):
        return AnalyticEvaluator(self, society)


class AnalyticEvaluator(Evaluator):
    def __init__(self, target, society, terms=None):
        self.target = target
        self.society = society
        pop = society[target.species]
        if terms is None:
            terms = target.log_point(pop.values) if len(pop) else np.empty(0)
            if len(pop) and not np.all(pop.species.prior.in_support(pop.values)):
                terms = np.full(len(pop), -np.inf)
        self.terms = terms
        self.log_density = target._log_poisson(len(pop)) + float(np.sum(terms))

    def _term(self, theta):
        prior = self.society[self.target.species].species.prior
        if prior.log_density_individual(theta) == -math.inf:
            return -math.inf
        return float(self.target.log_point(theta)[0])

    def death_log_ratios(self, alpha):
        n = len(self.terms)
        return math.log(n) - self.target._log_nbar - self.terms

    def birth_log_ratio(self, alpha, theta):
        n = len(self.terms)
        return self.target._log_nbar - math.log(n + 1) + self._term(theta)

    def mutation_log_ratio(self, alpha, j, theta):
        return self._term(theta) - self.terms[j]

    def after_birth(self, alpha, theta, log_ratio=None):
        soc = clone_with_birth(self.society, alpha, theta)
        return AnalyticEvaluator(self.target, soc, np.append(self.terms, self._term(theta)))

    def after_death(self, alpha, j, log_ratio=None):
        soc = clone_with_death(self.society, alpha, j)
        return AnalyticEvaluator(self.target, soc, np.delete(self.terms, j))

    def after_mutation(self, alpha, j, theta, log_ratio=None):
        soc = clone_with_mutation(self.society, alpha, j, theta)
        terms = self.terms.copy()
        terms[j] = self._term(theta)
        return AnalyticEvaluator(self.target, soc, terms)


# ---------------------------------------------------------------------------
# Gaussian time-series likelihood
# ---------------------------------------------------------------------------


def _total_signal(society: Society, times: np.ndarray) -> np.ndarray:
    h = np.zeros_like(times)
    for pop in society:
        tpl = pop.species.template
        if tpl is None:
            if len(pop):
                raise ModelError(f"species {pop.species.name!r} has no signal template")
            continue
        for theta in pop.values:
            h += tpl(times, theta)
    return h


def timeseries_log_likelihood(society: Society, data: Dataset) -> float:
    """White Gaussian noise log-likelihood of the residual ``d - h`` with constant variance."""
    if data.kind != "timeseries":
        raise ModelError("timeseries likelihood needs a timeseries dataset")
    r = data.values - _total_signal(society, data.times)
    c = data.noise_variance
    return -0.5 * (float(np.dot(r, r)) / c + len(r) * math.log(2.0 * math.pi * c))


class TimeseriesTarget(Target):
    data_kind = "timeseries"

    def __init__(self, data: Dataset):
        super().__init__(data)
        self._const = -0.5 * len(data.times) * math.log(2.0 * math.pi * data.noise_variance)

    def log_likelihood(self, society):
        return timeseries_log_likelihood(society, self.data)

    def evaluator(self, society):
        return TimeseriesEvaluator(self, society)


class TimeseriesEvaluator(Evaluator):
    """Caches each individual's template and the residual; O(T) ratio queries."""

    refresh_every = 2000

    def __init__(self, target, society, cache=None):
        self.target = target
        self.society = society
        times = target.data.times
        if cache is None:
            templates = []
            for pop in society:
                tpl = pop.species.template
                if tpl is None and len(pop):
                    raise ModelError(f"species {pop.species.name!r} has no signal template")
                templates.append([tpl(times, th) for th in pop.values])
            resid = target.data.values.copy()
            for tl in templates:
                for s in tl:
                    resid -= s
            lp = log_prior(society)
            age = 0
        else:
            templates, resid, lp, age = cache
        self.templates = templates
        self.resid = resid
        self.log_prior = lp
        self._age = age
        self._inv_c = 1.0 / target.data.noise_variance
        self.log_density = lp + target._const - 0.5 * float(np.dot(resid, resid)) * self._inv_c

    def _prior_term(self, alpha, theta):
        return self.society[alpha].species.prior.log_density_individual(theta)

    def _number_delta(self, alpha, dn):
        spec = self.society[alpha].species
        n = len(self.society[alpha])
        return spec.number_prior.logpmf(n + dn) - spec.number_prior.logpmf(n)

    def death_log_ratios(self, alpha):
        pop = self.society[alpha]
        n = len(pop)
        out = np.empty(n)
        dnum = self._number_delta(alpha, -1) if n else 0.0
        for j, s in enumerate(self.templates[alpha]):
            # residual becomes r + s
            dl = -0.5 * (2.0 * float(np.dot(self.resid, s)) + float(np.dot(s, s))) * self._inv_c
            out[j] = dl - self._prior_term(alpha, pop.values[j]) + dnum
        return out

    def _template(self, alpha, theta):
        return self.society[alpha].species.template(self.target.data.times, theta)

    def birth_log_ratio(self, alpha, theta, s=None):
        lp = self._prior_term(alpha, theta)
        if lp == -math.inf:
            return -math.inf
        if s is None:
            s = self._template(alpha, theta)
        dl = 0.5 * (2.0 * float(np.dot(self.resid, s)) - float(np.dot(s, s))) * self._inv_c
        return dl + lp + self._number_delta(alpha, 1)

    def mutation_log_ratio(self, alpha, j, theta):
        lp = self._prior_term(alpha, theta)
        if lp == -math.inf:
            return -math.inf
        new_resid = self.resid + self.templates[alpha][j] - self._template(alpha, theta)
        dl = -0.5 * (float(np.dot(new_resid, new_resid)) - float(np.dot(self.resid, self.resid))) * self._inv_c
        return dl + lp - self._prior_term(alpha, self.society[alpha].values[j])

    def _successor(self, soc, templates, resid, log_prior_value):
        age = self._age + 1
        if age >= self.refresh_every:
            return TimeseriesEvaluator(self.target, soc)
        return TimeseriesEvaluator(self.target, soc, (templates, resid, log_prior_value, age))

    def after_birth(self, alpha, theta, log_ratio=None):
        soc = clone_with_birth(self.society, alpha, theta)
        s = self._template(alpha, theta)
        templates = list(self.templates)
        templates[alpha] = templates[alpha] + [s]
        lp = self.log_prior + self._prior_term(alpha, theta) + self._number_delta(alpha, 1)
        return self._successor(soc, templates, self.resid - s, lp)

    def after_death(self, alpha, j, log_ratio=None):
        soc = clone_with_death(self.society, alpha, j)
        templates = list(self.templates)
        tl = list(templates[alpha])
        s = tl.pop(j)
        templates[alpha] = tl
        lp = self.log_prior - self._prior_term(alpha, self.society[alpha].values[j]) + self._number_delta(alpha, -1)
        return self._successor(soc, templates, self.resid + s, lp)

    def after_mutation(self, alpha, j, theta, log_ratio=None):
        soc = clone_with_mutation(self.society, alpha, j, theta)
        s = self._template(alpha, theta)
        templates = list(self.templates)
        tl = list(templates[alpha])
        old = tl[j]
        tl[j] = s
        templates[alpha] = tl
        lp = self.log_prior - self._prior_term(alpha, self.society[alpha].values[j]) + self._prior_term(alpha, theta)
        return self._successor(soc, templates, self.resid + old - s, lp)


# ---------------------------------------------------------------------------
# Gaussian mixture likelihood
# ---------------------------------------------------------------------------

SIMPLEX_TOL = 1e-9


def _component_densities(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``(K, n)`` array of ``w_k N(x | mu_k, var_k)``."""
    w, mu, var = values[:, 0:1], values[:, 1:2], values[:, 2:3]
    z = (x[None, :] - mu) ** 2 / var
    return w * np.exp(-0.5 * z) / np.sqrt(2.0 * math.pi * var)


def _component_logdens(values, x):
    w, mu, var = values[:, 0:1], values[:, 1:2], values[:, 2:3]
    with np.errstate(divide="ignore"):
        return np.log(w) - 0.5 * (x[None, :] - mu) ** 2 / var - 0.5 * np.log(2.0 * math.pi * var)


def gmm_log_likelihood(society: Society, data: Dataset, species: int = 0) -> float:
    """Sum over data of the log mixture density of the (1-D) Gaussian mixture."""
    if data.kind != "samples":
        raise ModelError("gmm likelihood needs a samples dataset")
    values = society[species].values
    if len(values) == 0:
        return -math.inf
    if abs(values[:, 0].sum() - 1.0) > SIMPLEX_TOL:
        raise ModelError(f"mixture weights sum to {values[:, 0].sum()!r}, not 1")
    if np.any(values[:, 2] <= 0):
        return -math.inf
    x = data.points[:, 0]
    return float(np.sum(logsumexp(_component_logdens(values, x), axis=0)))


class GMMTarget(Target):
    data_kind = "samples"

    def __init__(self, data: Dataset, species: int = 0):
        super().__init__(data)
        self.species = species
        self.x = data.points[:, 0]

    def log_likelihood(self, society):
        return gmm_log_likelihood(society, self.data, self.species)

    def evaluator(self, society):
        return GMMEvaluator(self, society)


class GMMEvaluator(Evaluator):
    """Caches weighted component densities; removal/addition reuse the total."""

    def __init__(self, target, society):
        self.target = target
        self.society = society
        pop = society[target.species]
        self.log_prior = log_prior(society)
        if len(pop) and np.all(pop.values[:, 2] > 0) and self.log_prior > -math.inf:
            self.dens = _component_densities(pop.values, target.x)
            self.total = self.dens.sum(axis=0)
            if np.all(self.total > 0):
                self.loglik = float(np.sum(np.log(self.total)))
            else:
                self.loglik = target.log_likelihood(society)
        else:
            self.dens = None
            self.total = None
            self.loglik = -math.inf if len(pop) == 0 else target.log_likelihood(society)
        self.log_density = self.log_prior + self.loglik if self.log_prior > -math.inf else -math.inf

    def death_log_ratios(self, alpha):
        pop = self.society[alpha]
        n = len(pop)
        if n <= 1 or self.dens is None or alpha != self.target.species:
            return super().death_log_ratios(alpha)
        spec = pop.species
        vals = pop.values
        prior = spec.prior
        if hasattr(prior, "removal_log_densities"):
            others = self.log_prior - spec.number_prior.logpmf(n) - prior.log_density_population(vals)
            lp = others + spec.number_prior.logpmf(n - 1) + prior.removal_log_densities(vals)
        else:
            lp = np.array([log_prior(clone_with_death(self.society, alpha, j)) for j in range(n)])
        w = vals[:, 0]
        # sums over the other components from prefix and suffix sums, free of cancellation
        zero = np.zeros((1, self.dens.shape[1]))
        pre = np.concatenate([zero, np.cumsum(self.dens, axis=0)[:-1]])
        suf = np.concatenate([np.cumsum(self.dens[::-1], axis=0)[::-1][1:], zero])
        with np.errstate(divide="ignore"):
            ll = np.log(pre + suf).sum(axis=1) - len(self.total) * np.log1p(-w)
        for j in np.flatnonzero(~np.isfinite(ll)):
            # underflow of the remaining mixture: fall back to log-space evaluation
            ll[j] = self.target.log_likelihood(clone_with_death(self.society, alpha, j))
        with np.errstate(invalid="ignore"):
            out = lp + ll - self.log_density
        return np.where(lp == -np.inf, -np.inf, out)

    def birth_log_ratio(self, alpha, theta):
        soc = clone_with_birth(self.society, alpha, theta)
        lp = log_prior(soc)
        if lp == -math.inf:
            return -math.inf
        if self.total is None:
            return self.target.log_density(soc) - self.log_density
        w = theta[0]
        new = (1.0 - w) * self.total + _component_densities(np.asarray(theta, float)[None, :], self.target.x)[0]
        if np.all(new > 0):
            ll = float(np.sum(np.log(new)))
        else:
            ll = self.target.log_likelihood(soc)
        return lp + ll - self.log_density

    def after_birth(self, alpha, theta, log_ratio=None):
        return GMMEvaluator(self.target, clone_with_birth(self.society, alpha, theta))

    def after_death(self, alpha, j, log_ratio=None):
        return GMMEvaluator(self.target, clone_with_death(self.society, alpha, j))

    def after_mutation(self, alpha, j, theta, log_ratio=None):
        return GMMEvaluator(self.target, clone_with_mutation(self.society, alpha, j, theta))


def log_target(society: Society, target: Target) -> float:
    """Unnormalized log posterior (log prior + log likelihood) of ``society``."""
    return target.log_density(society)

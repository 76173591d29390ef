"""Birth proposals ``h(theta | population)`` and mutation kernels ``q(theta' | theta)``.

Birth proposals must be evaluable at arbitrary points: death rates need
``h`` at each existing individual given the population it would leave
behind.  Mutation kernels return the forward and reverse log-densities of the
move they drew.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import GMMConjugatePrior, ModelError, Population

__all__ = [
    "ProposalConfig",
    "PriorBirth",
    "NIWBetaBirth",
    "GaussianMutation",
    "FisherGaussianMutation",
    "MitosisMutation",
    "PriorMutation",
    "SpeciesProposals",
    "build_proposals",
]


@dataclass(frozen=True)
class ProposalConfig:
    birth_kind: str = "prior"
    mutation_kind: str = "gaussian"
    sigma: tuple[float, ...] | None = None
    xi_strength: tuple[float, ...] | None = None
    keep_prob: float = 0.0
    scales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.birth_kind not in ("prior", "niw_beta"):
            raise ModelError(f"unknown birth proposal {self.birth_kind!r}")
        if self.mutation_kind not in ("gaussian", "fisher", "mitosis", "prior", "none"):
            raise ModelError(f"unknown mutation proposal {self.mutation_kind!r}")
        if self.mutation_kind == "gaussian":
            if self.sigma is None or any(not s > 0 for s in self.sigma):
                raise ModelError("gaussian mutation needs sigma > 0 for every parameter")
        if self.mutation_kind == "mitosis":
            if self.xi_strength is None or any(x < 0 for x in self.xi_strength):
                raise ModelError("mitosis needs xi_strength >= 0 for every parameter")
            if not 0.0 <= self.keep_prob <= 1.0:
                raise ModelError("mitosis keep_prob must lie in [0, 1]")


# ---------------------------------------------------------------------------
# birth
# ---------------------------------------------------------------------------


class PriorBirth:
    """Draw new individuals from the species prior."""

    def __init__(self, prior):
        if not getattr(prior, "proper", False):
            raise ModelError("prior birth proposal needs a proper prior")
        if isinstance(prior, GMMConjugatePrior):
            raise ModelError("mixture species need the niw_beta birth proposal")
        self.prior = prior

    def propose(self, population: Population, rng: np.random.Generator):
        theta = self.prior.sample(rng, 1)[0]
        return theta, self.prior.log_density_individual(theta)

    def log_density(self, population: Population, theta) -> float:
        return self.prior.log_density_individual(theta)

    def log_density_n(self, n_pop: int, theta) -> float:
        return self.prior.log_density_individual(theta)

    __call__ = log_density_n

    def rows(self, n_pop: int, values) -> np.ndarray:
        """``log_density_n`` for every row of ``values``."""
        values = np.asarray(values, dtype=float)
        ok = self.prior.in_support(values)
        return np.where(ok, self.prior.log_norm, -np.inf)


class NIWBetaBirth:
    """Conjugate birth for mixture components: ``Beta(w | 1, N_pop) x NIG(mean, var)``.

    Into an empty population the weight is 1 with certainty and only the
    NIG part carries density.
    """

    def __init__(self, prior):
        if not isinstance(prior, GMMConjugatePrior):
            raise ModelError("niw_beta birth proposal is only defined for mixture species")
        self.prior = prior

    def propose(self, population: Population, rng: np.random.Generator):
        n = len(population)
        mean, var = self.prior.sample_nig(rng, 1)
        w = rng.beta(1.0, n) if n else 1.0
        theta = np.array([w, mean[0], var[0]])
        return theta, self.log_density_n(n, theta)

    def log_density(self, population: Population, theta) -> float:
        return self.log_density_n(len(population), theta)

    def log_density_n(self, n_pop: int, theta) -> float:
        w = theta[0]
        out = float(self.prior.log_nig(theta[1], theta[2]))
        if n_pop == 0:
            return out
        if not 0.0 <= w < 1.0:
            return -math.inf
        return out + math.log(n_pop) + (n_pop - 1) * math.log1p(-w)

    __call__ = log_density_n

    def rows(self, n_pop: int, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        out = np.asarray(self.prior.log_nig(values[:, 1], values[:, 2]), dtype=float).reshape(len(values))
        if n_pop == 0:
            return out
        w = values[:, 0]
        ok = (w >= 0.0) & (w < 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            extra = math.log(n_pop) + (n_pop - 1) * np.log1p(-np.where(ok, w, 0.0))
        return np.where(ok, out + extra, -np.inf)


# ---------------------------------------------------------------------------
# mutation
# ---------------------------------------------------------------------------


class GaussianMutation:
    """Symmetric Gaussian drift with per-parameter widths.

    With several ``scales`` the widths are multiplied by one scale drawn
    uniformly per move; the mixture kernel stays symmetric, so its forward
    and reverse densities cancel and are reported as equal.
    """

    def __init__(self, sigma, scales=(1.0,)):
        self.sigma = np.asarray(sigma, dtype=float)
        self.scales = np.asarray(scales, dtype=float)
        if np.any(self.scales <= 0):
            raise ModelError("mutation scales must be positive")

    def propose(self, theta, population, rng):
        scale = self.scales[rng.integers(len(self.scales))] if len(self.scales) > 1 else self.scales[0]
        new = theta + scale * self.sigma * rng.standard_normal(len(self.sigma))
        return new, 0.0, 0.0


class FisherGaussianMutation:
    """Gaussian drift with widths set by the signal-to-noise ratio of the moving source.

    Width ``k`` is ``1 / sqrt(F_kk(theta))`` with ``F`` the diagonal of the
    Fisher matrix of the source's template under white noise of variance
    ``noise_variance``, capped at ``max_sigma``.  One multiplier is drawn
    uniformly from ``scales`` per move.  The widths depend on the current
    point, so the forward and reverse densities differ.
    """

    def __init__(self, template, times, noise_variance: float, max_sigma, scales=(1.0,), rel_step: float = 1e-5,
                 max_points: int = 500):
        if not noise_variance > 0:
            raise ModelError("noise variance must be positive")
        self.template = template
        times = np.asarray(times, dtype=float)
        # the widths only set a scale: a thinned time grid, reweighted, is accurate enough
        stride = max(1, -(-len(times) // max_points))
        self.times = times[::stride]
        self.weight = len(times) / len(self.times) / float(noise_variance)
        self.max_sigma = np.asarray(max_sigma, dtype=float)
        self.scales = np.asarray(scales, dtype=float)
        if np.any(self.max_sigma <= 0) or np.any(self.scales <= 0):
            raise ModelError("fisher widths and scales must be positive")
        self.step = rel_step * self.max_sigma
        self._cache: dict[bytes, np.ndarray] = {}

    def widths(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key in self._cache:
            return self._cache[key]
        base = self.template(self.times, theta)
        fisher = np.empty(len(theta))
        for k, h in enumerate(self.step):
            shifted = theta.copy()
            shifted[k] += h
            d = (self.template(self.times, shifted) - base) / h
            fisher[k] = np.dot(d, d) * self.weight
        with np.errstate(divide="ignore"):
            sd = np.minimum(1.0 / np.sqrt(fisher), self.max_sigma)
        if len(self._cache) >= 256:
            self._cache.clear()
        self._cache[key] = sd
        return sd

    def _logq(self, to, frm, sd):
        z = (to - frm)[None, :] / (self.scales[:, None] * sd[None, :])
        per = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.scales[:, None] * sd[None, :]), axis=1)
        return float(np.logaddexp.reduce(per) - math.log(len(self.scales)) - 0.5 * len(sd) * math.log(2 * math.pi))

    def propose(self, theta, population, rng):
        theta = np.asarray(theta, dtype=float)
        sd = self.widths(theta)
        scale = self.scales[rng.integers(len(self.scales))]
        new = theta + scale * sd * rng.standard_normal(len(theta))
        return new, self._logq(new, theta, sd), self._logq(theta, new, self.widths(new))


class MitosisMutation:
    """Multiplicative Gaussian shift ``N(theta_0, xi * |theta_0|)`` on a random subset of components.

    Each component is left untouched with probability ``keep_prob``; the
    kernel densities are conditional on the realized mask.
    """

    def __init__(self, xi_strength, keep_prob=0.0):
        self.xi = np.asarray(xi_strength, dtype=float)
        self.keep_prob = float(keep_prob)
        self.last_mask = None

    @staticmethod
    def _logq(to, frm, xi, mask):
        sd = xi * np.abs(frm)
        active = mask & (sd > 0)
        if np.any(mask & (sd == 0) & (to != frm)):
            return -math.inf
        if not np.any(active):
            return 0.0
        return float(np.sum(stats.norm.logpdf(to[active], frm[active], sd[active])))

    def propose(self, theta, population, rng):
        theta = np.asarray(theta, dtype=float)
        mask = rng.random(len(theta)) >= self.keep_prob
        sd = self.xi * np.abs(theta)
        new = theta.copy()
        move = mask & (sd > 0)
        new[move] = theta[move] + sd[move] * rng.standard_normal(int(move.sum()))
        self.last_mask = mask
        return new, self._logq(new, theta, self.xi, mask), self._logq(theta, new, self.xi, mask)


class PriorMutation:
    """Independence sampler from the prior."""

    def __init__(self, prior):
        self.prior = prior

    def propose(self, theta, population, rng):
        new = self.prior.sample(rng, 1)[0]
        return new, self.prior.log_density_individual(new), self.prior.log_density_individual(theta)


# ---------------------------------------------------------------------------


class SpeciesProposals:
    """Birth and mutation proposals attached to one species."""

    def __init__(self, birth, mutation):
        self.birth = birth
        self.mutation = mutation

    def propose_birth(self, population, rng):
        return self.birth.propose(population, rng)

    def birth_log_density(self, population, theta):
        return self.birth.log_density(population, theta)

    def propose_mutation(self, individual, population, rng):
        if self.mutation is None:
            raise ModelError("no mutation proposal configured")
        return self.mutation.propose(np.asarray(individual, dtype=float), population, rng)


def build_proposals(prior, cfg: ProposalConfig, n_par: int | None = None, template=None, dataset=None) -> SpeciesProposals:
    """Proposals of one species; the ``fisher`` kernel also needs the template and a time-series dataset."""
    birth = NIWBetaBirth(prior) if cfg.birth_kind == "niw_beta" else PriorBirth(prior)
    if cfg.mutation_kind == "fisher":
        if template is None or dataset is None or getattr(dataset, "kind", None) != "timeseries":
            raise ModelError("fisher mutation needs a signal template and a time-series dataset")
        if not getattr(prior, "proper", False):
            raise ModelError("fisher mutation needs a bounded prior")
        bounds = np.asarray(prior.bounds, dtype=float)
        mutation = FisherGaussianMutation(template, dataset.times, dataset.noise_variance, bounds[:, 1] - bounds[:, 0],
                                          cfg.scales)
    elif cfg.mutation_kind == "gaussian":
        if n_par is not None and len(cfg.sigma) != n_par:
            raise ModelError(f"gaussian sigma has {len(cfg.sigma)} entries, expected {n_par}")
        mutation = GaussianMutation(cfg.sigma, cfg.scales)
    elif cfg.mutation_kind == "mitosis":
        mutation = MitosisMutation(cfg.xi_strength, cfg.keep_prob)
    elif cfg.mutation_kind == "prior":
        mutation = PriorMutation(prior)
    else:
        mutation = None
    return SpeciesProposals(birth, mutation)

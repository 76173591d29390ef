"""State representation: individuals, populations and societies.

An individual is a 1-D float array of length ``spec.n_par``.  A population
stores its individuals as the rows of a read-only ``(n, n_par)`` array; the
row order carries no meaning.  A society is a tuple of populations, one per
declared species, in registry order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "ModelError",
    "NumberPrior",
    "UniformBoxPrior",
    "GMMConjugatePrior",
    "SpeciesSpec",
    "Population",
    "Society",
    "make_society",
    "log_prior",
    "clone_with_birth",
    "clone_with_death",
    "clone_with_mutation",
]


class ModelError(ValueError):
    """Invalid species declaration, initialization or state edit."""


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumberPrior:
    """Prior on the number of individuals of one species.

    ``kind`` is one of ``"improper"`` (flat over all nonnegative integers,
    contributes 0 to every log-density), ``"poisson"`` (needs ``mean``) or
    ``"pmf"`` (explicit probabilities for counts 0..len(pmf)-1).
    """

    kind: str = "improper"
    mean: float | None = None
    pmf: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "improper":
            return
        if self.kind == "poisson":
            if self.mean is None or not self.mean > 0:
                raise ModelError("poisson number prior needs mean > 0")
        elif self.kind == "pmf":
            if not self.pmf or any(p < 0 for p in self.pmf):
                raise ModelError("pmf number prior needs nonnegative entries")
            if abs(sum(self.pmf) - 1.0) > 1e-9:
                raise ModelError("pmf number prior must sum to 1")
        else:
            raise ModelError(f"unknown number prior kind {self.kind!r}")

    def logpmf(self, n: int) -> float:
        if self.kind == "improper":
            return 0.0
        if self.kind == "poisson":
            return float(stats.poisson.logpmf(n, self.mean))
        if n >= len(self.pmf) or self.pmf[n] == 0:
            return -math.inf
        return math.log(self.pmf[n])


class UniformBoxPrior:
    """Independent uniform prior on a closed box; ``None`` bounds are improper."""

    kind = "uniform-box"

    def __init__(self, bounds: Sequence[tuple[float, float] | None]):
        self.bounds = [None if b is None else (float(b[0]), float(b[1])) for b in bounds]
        for b in self.bounds:
            if b is not None and not b[0] < b[1]:
                raise ModelError(f"prior bound {b} needs low < high")
        self.proper = all(b is not None for b in self.bounds)
        lows = [-np.inf if b is None else b[0] for b in self.bounds]
        highs = [np.inf if b is None else b[1] for b in self.bounds]
        self.low = np.array(lows)
        self.high = np.array(highs)
        widths = [b[1] - b[0] for b in self.bounds if b is not None]
        self.log_norm = -float(np.sum(np.log(widths))) if widths else 0.0

    @property
    def volume(self) -> float:
        return math.exp(-self.log_norm)

    def in_support(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(values)
        return np.all((values >= self.low) & (values <= self.high), axis=1)

    def log_density_individual(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if np.all(theta >= self.low) and np.all(theta <= self.high):
            return self.log_norm
        return -math.inf

    def log_density_population(self, values: np.ndarray) -> float:
        if len(values) == 0:
            return 0.0
        if not np.all(self.in_support(values)):
            return -math.inf
        return len(values) * self.log_norm

    def sample(self, rng: np.random.Generator, n: int, n_existing: int = 0) -> np.ndarray:
        if not self.proper:
            raise ModelError("cannot draw from an improper continuous prior")
        return rng.uniform(self.low, self.high, size=(n, len(self.bounds)))


class GMMConjugatePrior:
    """Prior of a one-dimensional Gaussian mixture component (weight, mean, var).

    Means and variances follow a Normal-Inverse-Gamma law
    ``var ~ InvGamma(nu/2, scale/2)``, ``mean | var ~ N(mean0, var/kappa)``;
    the weights of the population follow a symmetric Dirichlet with
    concentration ``1/N_pop``.  Densities over weights are taken with respect
    to the first ``N_pop - 1`` weights (the simplex coordinates).
    """

    kind = "gmm-conjugate"
    proper = True

    def __init__(self, mean0: float, kappa: float, scale: float, nu: float):
        if not kappa > 0 or not scale > 0 or not nu > 0:
            raise ModelError("NIG hyperparameters must be positive")
        self.mean0 = float(mean0)
        self.kappa = float(kappa)
        self.scale = float(scale)
        self.nu = float(nu)
        self.bounds = [(0.0, 1.0), None, (0.0, None)]

    @classmethod
    def from_data(cls, data: np.ndarray, kappa: float = 0.2, nu: float | None = None):
        """Data-driven defaults: mean0 = data mean, scale = var(kappa * data), nu = M + 2."""
        data = np.asarray(data, dtype=float).ravel()
        if nu is None:
            nu = 1 + 2.0
        return cls(float(np.mean(data)), kappa, float(np.var(kappa * data, ddof=1)), nu)

    @property
    def ig_shape(self) -> float:
        return self.nu / 2.0

    @property
    def ig_rate(self) -> float:
        return self.scale / 2.0

    def log_nig(self, mean, var) -> np.ndarray:
        mean = np.asarray(mean, dtype=float)
        var = np.asarray(var, dtype=float)
        a, b = self.ig_shape, self.ig_rate
        with np.errstate(divide="ignore", invalid="ignore"):
            lv = np.log(var)
            out = (a * math.log(b) - math.lgamma(a) - (a + 1.0) * lv - b / var
                   - 0.5 * (math.log(2 * math.pi / self.kappa) + lv) - 0.5 * self.kappa * (mean - self.mean0) ** 2 / var)
        return np.where(var > 0, out, -np.inf)

    def sample_nig(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        var = self.ig_rate / rng.gamma(self.ig_shape, 1.0, size=n)
        mean = rng.normal(self.mean0, np.sqrt(var / self.kappa))
        return mean, var

    def log_density_individual(self, theta: np.ndarray) -> float:
        # NIG part only; the weight enters through the population-level Dirichlet
        return float(self.log_nig(theta[1], theta[2]))

    def log_density_population(self, values: np.ndarray) -> float:
        n = len(values)
        if n == 0:
            return 0.0
        w = values[:, 0]
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-9:
            return -math.inf
        out = float(np.sum(self.log_nig(values[:, 1], values[:, 2])))
        if n > 1:
            g = 1.0 / n
            out += special.gammaln(n * g) - n * special.gammaln(g) + (g - 1.0) * float(np.sum(np.log(w)))
        return out

    def removal_log_densities(self, values: np.ndarray) -> np.ndarray:
        """``log_density_population`` after removing row ``j`` (weights renormalized), for every ``j``."""
        values = np.asarray(values, dtype=float)
        n = len(values)
        nig = self.log_nig(values[:, 1], values[:, 2])
        out = nig.sum() - nig
        if n - 1 > 1:
            g = 1.0 / (n - 1)
            w = values[:, 0]
            lw = np.log(w)
            out = out - (n - 1) * math.lgamma(g) + (g - 1.0) * (lw.sum() - lw - (n - 1) * np.log1p(-w))
        return out

    def sample(self, rng: np.random.Generator, n: int, n_existing: int = 0) -> np.ndarray:
        mean, var = self.sample_nig(rng, n)
        if n == 0:
            w = np.empty(0)
        elif n == 1:
            w = np.ones(1)
        else:
            w = rng.dirichlet(np.full(n, 1.0 / n))
            # guard against underflow to exact zero with tiny concentrations
            w = np.maximum(w, 1e-300)
            w = w / w.sum()
        return np.column_stack([w, mean, var])


# ---------------------------------------------------------------------------
# species / populations / society
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SpeciesSpec:
    """Declaration of one species.

    ``template`` (optional) maps ``(times, values)`` to the summed signal of
    all individuals of the species; it is used by time-series targets and by
    signal reconstruction.  ``proposal`` and ``mutation_sampler`` are filled
    in from configuration (see :mod:`samsara.proposals`).
    """

    name: str
    param_names: list[str]
    prior: object
    number_prior: NumberPrior = field(default_factory=NumberPrior)
    z_factor_kind: str = "unit"
    proposal: object = None
    mutation_sampler: str = "mh"
    rates: object = None
    template: Callable | None = None

    def __post_init__(self):
        self.param_names = list(self.param_names)
        if len(self.param_names) != len(self.prior.bounds):
            raise ModelError(
                f"species {self.name!r}: {len(self.param_names)} parameter names "
                f"but {len(self.prior.bounds)} bounds"
            )
        if self.z_factor_kind not in ("unit", "gmm"):
            raise ModelError(f"unknown z_factor_kind {self.z_factor_kind!r}")
        if self.z_factor_kind == "gmm" and self.param_names[0] != "weight":
            raise ModelError("gmm species must have 'weight' as first parameter")

    @property
    def n_par(self) -> int:
        return len(self.param_names)

    @property
    def simplex(self) -> bool:
        """True when the first parameter is a mixture weight living on the simplex."""
        return self.z_factor_kind == "gmm"

    @property
    def prior_kind(self) -> str:
        return getattr(self.prior, "kind", "custom")

    @property
    def bounds(self):
        return self.prior.bounds

    def __repr__(self):
        return f"SpeciesSpec({self.name!r}, {self.param_names})"


class Population:
    """Individuals of one species; rows of ``values`` are exchangeable."""

    __slots__ = ("species", "values")

    def __init__(self, species: SpeciesSpec, values=None):
        if values is None:
            values = np.empty((0, species.n_par))
        values = np.array(values, dtype=float, copy=True).reshape(-1, species.n_par)
        self.species = species
        self.values = _frozen(values)

    @classmethod
    def _wrap(cls, species, values):
        # trusted constructor: values is a fresh array owned by the caller
        pop = cls.__new__(cls)
        pop.species = species
        pop.values = _frozen(values)
        return pop

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_pop(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, j):
        return self.values[j]

    def __repr__(self):
        return f"Population({self.species.name!r}, n={len(self)})"


class Society(tuple):
    """One :class:`Population` per declared species, in registry order."""

    def __new__(cls, populations):
        return super().__new__(cls, populations)

    @property
    def specs(self) -> list[SpeciesSpec]:
        return [p.species for p in self]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self)

    def with_population(self, alpha: int, pop: Population) -> "Society":
        pops = list(self)
        pops[alpha] = pop
        return Society(pops)

    def __repr__(self):
        return "Society(" + ", ".join(f"{p.species.name}={len(p)}" for p in self) + ")"


def make_society(specs: Sequence[SpeciesSpec], initial_counts: Sequence[int], rng: np.random.Generator) -> Society:
    """Initial society with ``initial_counts[a]`` individuals drawn from each species prior."""
    if len(specs) != len(initial_counts):
        raise ModelError("initial_counts must align with species specs")
    pops = []
    for spec, count in zip(specs, initial_counts):
        if count < 0:
            raise ModelError(f"negative initial count for species {spec.name!r}")
        if count > 0 and not getattr(spec.prior, "proper", False):
            raise ModelError(f"species {spec.name!r}: cannot initialize from an improper prior")
        values = spec.prior.sample(rng, count) if count else np.empty((0, spec.n_par))
        pops.append(Population._wrap(spec, np.asarray(values, dtype=float).reshape(-1, spec.n_par)))
    return Society(pops)


def log_prior(society: Society) -> float:
    """Sum over species of number-prior log pmf and individual prior log densities."""
    total = 0.0
    for pop in society:
        spec = pop.species
        total += spec.number_prior.logpmf(len(pop))
        total += spec.prior.log_density_population(pop.values)
        if total == -math.inf:
            return -math.inf
    return total


# ---------------------------------------------------------------------------
# state edits
# ---------------------------------------------------------------------------


def _check_species(society, alpha):
    if not 0 <= alpha < len(society):
        raise ModelError(f"species index {alpha} out of range")


def clone_with_birth(society: Society, alpha: int, theta) -> Society:
    """Society with ``theta`` appended to species ``alpha``.

    For simplex species the existing weights are scaled by ``1 - w_new``.
    """
    _check_species(society, alpha)
    pop = society[alpha]
    spec = pop.species
    theta = np.asarray(theta, dtype=float).reshape(spec.n_par)
    values = np.empty((len(pop) + 1, spec.n_par))
    values[:-1] = pop.values
    values[-1] = theta
    if spec.simplex and len(pop):
        values[:-1, 0] *= 1.0 - theta[0]
    return society.with_population(alpha, Population._wrap(spec, values))


def clone_with_death(society: Society, alpha: int, j: int) -> Society:
    """Society with individual ``j`` of species ``alpha`` removed.

    For simplex species the surviving weights are divided by ``1 - w_j``.
    """
    _check_species(society, alpha)
    pop = society[alpha]
    n = len(pop)
    if n == 0:
        raise ModelError(f"death on empty population {pop.species.name!r}")
    if not -n <= j < n:
        raise ModelError(f"individual index {j} out of range for population of {n}")
    keep = list(range(n))
    del keep[j]
    values = pop.values[keep]
    if pop.species.simplex and len(values):
        values[:, 0] /= 1.0 - pop.values[j, 0]
        # re-close the simplex against rounding drift
        values[:, 0] /= values[:, 0].sum()
    return society.with_population(alpha, Population._wrap(pop.species, values))


def clone_with_mutation(society: Society, alpha: int, j: int, new_params) -> Society:
    """Society with individual ``j`` of species ``alpha`` replaced by ``new_params``."""
    _check_species(society, alpha)
    pop = society[alpha]
    n = len(pop)
    if not -n <= j < n:
        raise ModelError(f"individual index {j} out of range for population of {n}")
    values = pop.values.copy()
    values[j] = np.asarray(new_params, dtype=float).reshape(pop.species.n_par)
    return society.with_population(alpha, Population._wrap(pop.species, values))


def clone_with_values(society: Society, alpha: int, values) -> Society:
    """Society with the whole population of species ``alpha`` replaced."""
    _check_species(society, alpha)
    spec = society[alpha].species
    values = np.array(values, dtype=float, copy=True).reshape(-1, spec.n_par)
    return society.with_population(alpha, Population._wrap(spec, values))

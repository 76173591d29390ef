"""Transition rates from detailed balance.

Notation: ``y`` is the current population, ``x = y minus theta_j`` and
``z = y plus theta``.  Death rates of ``y`` are

    fixed birth:  R_j = Z/n * p(x)/p(y) * R_b * h(theta_j | x)
    varying:      R_j = min(1, Z/n * p(x)/p(y) * h(theta_j | x))

and the varying birth rate of a candidate ``theta ~ h(. | y)`` is

    R_b = min(1, (n+1)/Z * p(z)/p(y) / h(theta | y)).

``Z`` is evaluated at the size of the *smaller* of the two states linked by
the move, so a birth and the death that undoes it share the same factor.

Birth is split like mutation: the birth process fires at a constant cap
(``R_b`` for fixed birth, 1 for varying) and the realized candidate is taken
with probability ``rate / cap``, the rest being a ``stay``.  This keeps the
total rate, and hence the waiting time, independent of the random candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RateError",
    "RatePrescription",
    "SpeciesRates",
    "RateTable",
    "z_factor",
    "death_rates_fixed_birth",
    "log_death_rates_fixed_birth",
    "log_varying_death_rates",
    "varying_rates",
    "fixed_birth_rate",
    "mutation_acceptance",
    "split_mutation_rates",
    "clamped_exp",
    "log_z_factor",
    "log_z_rows",
]

LOG_CLAMP = 700.0


class RateError(RuntimeError):
    """Rates cannot be formed (zero-density state, uncovered proposal, absorbing state)."""


def clamped_exp(log_value):
    """``exp`` with the exponent clipped to +-700; ``-inf`` still maps to 0."""
    x = np.asarray(log_value, dtype=float)
    out = np.exp(np.minimum(np.maximum(x, -LOG_CLAMP), LOG_CLAMP))
    if out.ndim:
        out[x == -np.inf] = 0.0
    elif x == -np.inf:
        out = np.float64(0.0)
    return out


@dataclass(frozen=True)
class RatePrescription:
    kind: str = "fixed_birth"
    birth_rate: float = 1.0
    mutation_rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed_birth", "varying"):
            raise ValueError(f"unknown rate prescription {self.kind!r}")
        if self.kind == "fixed_birth" and not self.birth_rate > 0:
            raise ValueError("fixed birth rate must be positive")
        if not self.mutation_rate > 0:
            raise ValueError("mutation rate must be positive")

    @property
    def birth_cap(self) -> float:
        return self.birth_rate if self.kind == "fixed_birth" else 1.0

    @classmethod
    def parse(cls, text: str) -> "RatePrescription":
        """``"varying"`` or ``"fixed_birth:<R_b>"``."""
        text = text.strip()
        if text == "varying":
            return cls("varying")
        if text.startswith("fixed_birth"):
            _, _, val = text.partition(":")
            return cls("fixed_birth", float(val) if val else 1.0)
        raise ValueError(f"cannot parse rate prescription {text!r}")

    def __str__(self):
        return "varying" if self.kind == "varying" else f"fixed_birth:{self.birth_rate!r}"


class SpeciesRates:
    """Rates of one species: birth (with its cap), per-individual deaths, mutation."""

    __slots__ = ("birth_rate", "death_rates", "mutation_rate", "birth_cap", "death_total", "total", "n_individuals")

    def __init__(self, birth_rate=0.0, death_rates=(), mutation_rate=1.0, birth_cap=None, n_individuals=None):
        death_rates = np.asarray(death_rates, dtype=float).reshape(-1)
        birth_cap = birth_rate if birth_cap is None else birth_cap
        for v in (birth_rate, mutation_rate, birth_cap):
            if not (math.isfinite(v) and v >= 0):
                raise RateError(f"invalid rate {v!r}")
        if birth_rate > birth_cap * (1 + 1e-12):
            raise RateError("birth rate exceeds its cap")
        if death_rates.size and not (np.all(np.isfinite(death_rates)) and np.all(death_rates >= 0)):
            raise RateError("death rates must be finite and nonnegative")
        self._fill(birth_rate, death_rates, mutation_rate, birth_cap, n_individuals)

    def _fill(self, birth_rate, death_rates, mutation_rate, birth_cap, n_individuals):
        self.birth_rate = float(birth_rate)
        self.death_rates = death_rates
        self.mutation_rate = float(mutation_rate)
        self.birth_cap = float(birth_cap)
        self.death_total = float(np.add.reduce(death_rates)) if len(death_rates) else 0.0
        self.total = self.birth_cap + self.death_total + self.mutation_rate
        self.n_individuals = len(death_rates) if n_individuals is None else n_individuals

    @classmethod
    def trusted(cls, birth_cap, death_rates, mutation_rate, n_individuals):
        """Unvalidated constructor for the engine's inner loop (birth counted at its cap)."""
        self = cls.__new__(cls)
        self._fill(birth_cap, death_rates, mutation_rate, birth_cap, n_individuals)
        return self

    @property
    def process_totals(self) -> tuple[float, float, float]:
        """Totals of the birth, death and mutation processes (birth counted at its cap)."""
        return self.birth_cap, self.death_total, self.mutation_rate


class RateTable:
    """All rates of one step, indexed by species.

    Stored rates are the true rates times ``exp(-log_scale)``; the scale
    keeps very large death rates finite without changing their ratios.
    """

    def __init__(self, species: list[SpeciesRates], active: list[int] | None = None, log_scale: float = 0.0):
        self.species = list(species)
        self.log_scale = float(log_scale)
        # species whose rates were computed this step (all, unless Gibbs-cycled)
        if active is None:
            self.active = list(range(len(self.species)))
            self._totals = [sr.total for sr in self.species]
        else:
            self.active = list(active)
            act = set(self.active)
            self._totals = [sr.total if a in act else 0.0 for a, sr in enumerate(self.species)]
        self.grand_total = math.fsum(self._totals)
        self._tau = math.exp(-self.log_scale) / self.grand_total if self.grand_total > 0 else math.inf

    def species_totals(self) -> np.ndarray:
        return np.array(self._totals)

    @property
    def waiting_time(self) -> float:
        """``1 / sum(R)`` of the true rates (0 when it underflows)."""
        return self._tau


# ---------------------------------------------------------------------------


def z_factor(kind, n_pop: int, theta) -> float:
    """Prior-measure factor for the move linking populations of size ``n_pop`` and ``n_pop + 1``.

    ``kind`` is a species spec or its ``z_factor_kind``.  Point processes
    give 1.  For mixture species (weight first) the birth rescales existing
    weights by ``1 - w``, so the factor carries the inverse Jacobian
    ``(1 - w)^-(n_pop - 1)`` (1 when ``n_pop <= 1``).
    """
    kind = getattr(kind, "z_factor_kind", kind)
    if kind == "unit":
        return 1.0
    if kind != "gmm":
        raise ValueError(f"unknown z_factor kind {kind!r}")
    if n_pop <= 1:
        return 1.0
    w = float(theta[0])
    if not 0.0 < w < 1.0:
        raise RateError(f"mixture weight {w!r} outside (0, 1)")
    return (1.0 - w) ** (-(n_pop - 1))


def log_z_factor(kind, n_pop, theta) -> float:
    kind = getattr(kind, "z_factor_kind", kind)
    if kind == "unit" or n_pop <= 1:
        return 0.0
    return math.log(z_factor(kind, n_pop, theta))


def log_z_rows(kind, n_pop: int, values) -> np.ndarray:
    """Vectorized :func:`log_z_factor` over the rows of ``values``."""
    kind = getattr(kind, "z_factor_kind", kind)
    values = np.asarray(values, dtype=float)
    if kind == "unit" or n_pop <= 1:
        return np.zeros(len(values))
    w = values[:, 0]
    if np.any((w <= 0.0) | (w >= 1.0)):
        raise RateError("mixture weight outside (0, 1)")
    return -(n_pop - 1) * np.log1p(-w)


def _birth_rows(birth_log_density, n_pop, values):
    rows = getattr(birth_log_density, "rows", None)
    if rows is not None:
        return np.asarray(rows(n_pop, values), dtype=float)
    return np.array([birth_log_density(n_pop, t) for t in values], dtype=float)


def _death_log_terms(spec, population, log_ratios, birth_log_density):
    """``log(Z/n * p(x)/p(y) * h(theta_j | x))`` per individual."""
    n = len(population)
    vals = population.values
    log_ratios = np.asarray(log_ratios, dtype=float)
    if not np.maximum.reduce(log_ratios) < np.inf:  # also false for nan
        raise RateError("death ratios from a state of zero target density")
    lh = _birth_rows(birth_log_density, n - 1, vals)
    out = log_ratios - math.log(n) + lh
    if n > 2 and getattr(spec, "z_factor_kind", spec) != "unit":
        ok = lh > -np.inf
        if np.any(ok):
            out[ok] += log_z_rows(spec, n - 1, vals[ok])
    return out


def death_rates_fixed_birth(spec, population, log_ratios, birth_log_density, birth_rate: float) -> np.ndarray:
    """Fixed-birth death rates.

    ``log_ratios[j] = log p(x_j) - log p(y)``; ``birth_log_density(n, theta)``
    is ``log h(theta | population of size n)``.
    """
    return clamped_exp(log_death_rates_fixed_birth(spec, population, log_ratios, birth_log_density, birth_rate))


def log_death_rates_fixed_birth(spec, population, log_ratios, birth_log_density, birth_rate: float) -> np.ndarray:
    """Logarithm of :func:`death_rates_fixed_birth`, unclipped."""
    if len(population) == 0:
        return np.empty(0)
    out = _death_log_terms(spec, population, log_ratios, birth_log_density)
    out += math.log(birth_rate)
    return out


def varying_death_rates(spec, population, log_ratios, birth_log_density) -> np.ndarray:
    return clamped_exp(log_varying_death_rates(spec, population, log_ratios, birth_log_density))


def log_varying_death_rates(spec, population, log_ratios, birth_log_density) -> np.ndarray:
    if len(population) == 0:
        return np.empty(0)
    return np.minimum(_death_log_terms(spec, population, log_ratios, birth_log_density), 0.0)


def varying_birth_rate(spec, n_pop: int, theta, log_ratio: float, log_h: float) -> float:
    """``min(1, (n+1)/Z * p(z)/p(y) / h(theta|y))`` for a candidate drawn from ``h``."""
    if log_h == -math.inf:
        raise RateError("birth candidate has zero proposal density")
    if log_ratio == -math.inf:
        return 0.0
    t = math.log(n_pop + 1) - log_z_factor(spec, n_pop, theta) + log_ratio - log_h
    return float(clamped_exp(min(t, 0.0)))


def varying_rates(spec, population, theta_candidate, log_h_candidate, birth_log_ratio, death_log_ratios, birth_log_density):
    """Birth rate of the candidate and death rates of every individual, varying prescription."""
    b = varying_birth_rate(spec, len(population), theta_candidate, birth_log_ratio, log_h_candidate)
    return b, varying_death_rates(spec, population, death_log_ratios, birth_log_density)


def fixed_birth_rate(prescription: RatePrescription, birth_log_ratio: float) -> float:
    """Fixed-birth rate of the candidate; births into zero-density states are switched off."""
    return 0.0 if birth_log_ratio == -math.inf else prescription.birth_rate


def mutation_acceptance(log_target_cur: float, log_target_prop: float, log_q_fwd: float, log_q_rev: float) -> float:
    """Metropolis-Hastings acceptance ``min(1, p'/p * q(y|y')/q(y'|y))``."""
    if not math.isfinite(log_target_cur):
        raise RateError("current state has zero target density")
    if log_target_prop == -math.inf or log_q_rev == -math.inf:
        return 0.0
    log_r = (log_target_prop - log_target_cur) + (log_q_rev - log_q_fwd)
    if log_r >= 0:
        return 1.0
    return math.exp(max(log_r, -LOG_CLAMP))


def split_mutation_rates(xi: float, mutation_rate: float = 1.0) -> tuple[float, float]:
    """Rates of leaving and of staying for a mutation accepted with probability ``xi``."""
    return mutation_rate * xi, mutation_rate * (1.0 - xi)

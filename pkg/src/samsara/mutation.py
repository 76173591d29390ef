"""In-dimension updates run when a mutation event fires."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GMMConjugatePrior, ModelError, Society, clone_with_values
from .rates import mutation_acceptance

__all__ = ["GibbsHyperparams", "mh_mutate", "mh_mutate_evaluator", "gibbs_sweep_gmm"]


@dataclass(frozen=True)
class GibbsHyperparams:
    """Conjugate hyperparameters of the 1-D mixture sampler.

    The weights get a symmetric Dirichlet with concentration ``1/K``.
    """

    kappa: float = 0.2
    nu: float = 3.0
    scale: float = 1.0
    mean0: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ModelError("kappa must be positive")
        if not self.nu > 0:  # nu > M - 1 with M = 1
            raise ModelError("nu must exceed M - 1 = 0")
        if not self.scale > 0:
            raise ModelError("scale must be positive")

    @classmethod
    def from_prior(cls, prior: GMMConjugatePrior):
        return cls(prior.kappa, prior.nu, prior.scale, prior.mean0)

    @classmethod
    def from_data(cls, data, kappa: float = 0.2):
        return cls.from_prior(GMMConjugatePrior.from_data(data, kappa))


def mh_mutate_evaluator(evaluator, alpha: int, j: int, proposals, rng: np.random.Generator):
    """One Metropolis-Hastings update of individual ``j``.

    Returns ``(evaluator, accepted, xi)``; the evaluator is unchanged on rejection.
    """
    pop = evaluator.society[alpha]
    theta = pop.values[j]
    new, log_q_fwd, log_q_rev = proposals.propose_mutation(theta, pop, rng)
    log_ratio = evaluator.mutation_log_ratio(alpha, j, new)
    xi = mutation_acceptance(evaluator.log_density, evaluator.log_density + log_ratio, log_q_fwd, log_q_rev)
    if xi >= 1.0 or rng.random() < xi:
        return evaluator.after_mutation(alpha, j, new, log_ratio), True, xi
    return evaluator, False, xi


def mh_mutate(society: Society, alpha: int, j: int, proposals, target, rng: np.random.Generator):
    """Single-individual MH step on ``society``; returns ``(society, accepted)``."""
    if len(society[alpha]) == 0:
        raise ModelError("cannot mutate an empty population")
    ev, accepted, _ = mh_mutate_evaluator(target.evaluator(society), alpha, j, proposals, rng)
    return ev.society, accepted


def _categorical_rows(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per column of ``logp`` (shape ``(K, n)``)."""
    p = np.exp(logp - logp.max(axis=0, keepdims=True))
    c = np.cumsum(p, axis=0)
    u = rng.random(logp.shape[1]) * c[-1]
    return np.minimum((c < u[None, :]).sum(axis=0), logp.shape[0] - 1)


def gibbs_sweep_gmm(society: Society, data, hyper: GibbsHyperparams, rng: np.random.Generator, alpha: int = 0) -> Society:
    """One blocked Gibbs sweep of a 1-D mixture at fixed number of components.

    Draws assignments, then weights from ``Dir(1/K + counts)``, then each
    component's (mean, var) from its Normal-Inverse-Gamma posterior.
    """
    x = np.asarray(getattr(data, "points", data), dtype=float).reshape(-1)
    if x.size == 0:
        raise ModelError("Gibbs sweep needs data")
    values = society[alpha].values
    k = len(values)
    if k == 0:
        raise ModelError("Gibbs sweep needs at least one component")

    w, mu, var = values[:, 0], values[:, 1], values[:, 2]
    with np.errstate(divide="ignore"):
        logp = (np.log(w)[:, None] - 0.5 * (x[None, :] - mu[:, None]) ** 2 / var[:, None]
                - 0.5 * np.log(2 * math.pi * var)[:, None])
    z = _categorical_rows(logp, rng)
    counts = np.bincount(z, minlength=k)

    if k == 1:
        new_w = np.ones(1)
    else:
        new_w = rng.dirichlet(1.0 / k + counts)
        new_w = np.maximum(new_w, 1e-300)
        new_w /= new_w.sum()

    a0, b0 = hyper.nu / 2.0, hyper.scale / 2.0
    sums = np.bincount(z, weights=x, minlength=k)
    sq = np.bincount(z, weights=x * x, minlength=k)
    new_mu = np.empty(k)
    new_var = np.empty(k)
    for i in range(k):
        n = counts[i]
        kap = hyper.kappa + n
        if n:
            xbar = sums[i] / n
            ss = max(sq[i] - n * xbar * xbar, 0.0)
            m = (hyper.kappa * hyper.mean0 + sums[i]) / kap
            b = b0 + 0.5 * ss + 0.5 * hyper.kappa * n * (xbar - hyper.mean0) ** 2 / kap
        else:
            m, b = hyper.mean0, b0
        a = a0 + 0.5 * n
        new_var[i] = b / rng.gamma(a, 1.0)
        new_mu[i] = rng.normal(m, math.sqrt(new_var[i] / kap))
    return clone_with_values(society, alpha, np.column_stack([new_w, new_mu, new_var]))

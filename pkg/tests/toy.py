"""Two-point trans-dimensional toy: one species on {a, b} = {0.0, 1.0}, at most 3 individuals."""

import itertools
import math

import numpy as np

from samsara.model import Society, SpeciesSpec, clone_with_birth, clone_with_death, clone_with_mutation
from samsara.proposals import SpeciesProposals
from samsara.targets import Evaluator, Target

N_MAX = 3
# multiset (m_a, m_b) -> probability; arbitrary but fixed
STATES = [(ma, mb) for n in range(N_MAX + 1) for ma, mb in [(k, n - k) for k in range(n + 1)]]
_RAW = np.array([3.0, 1.0, 2.0, 4.0, 1.5, 0.5, 2.5, 1.0, 3.5, 2.0])
PMF = dict(zip(STATES, _RAW / _RAW.sum()))
H = (0.3, 0.7)  # birth pmf over {a, b}
_LOG_H = (math.log(H[0]), math.log(H[1]))


def _log_labeled(ma, mb):
    n = ma + mb
    return math.log(PMF[(ma, mb)]) + math.lgamma(ma + 1) + math.lgamma(mb + 1) - math.lgamma(n + 1)


_LOG_LABELED = {s: _log_labeled(*s) for s in STATES}


def log_labeled(ma, mb):
    """Symmetric labeled density whose multiset law is PMF."""
    return _LOG_LABELED.get((ma, mb), -math.inf)


class TwoPointPrior:
    kind = "two-point"
    proper = True
    bounds = [(0.0, 1.0)]

    def in_support(self, values):
        v = np.atleast_2d(values)[:, 0]
        return (v == 0.0) | (v == 1.0)

    def log_density_individual(self, theta):
        return math.log(0.5) if float(theta[0]) in (0.0, 1.0) else -math.inf

    def log_density_population(self, values):
        return len(values) * math.log(0.5) if np.all(self.in_support(values)) else -math.inf

    def sample(self, rng, n, n_existing=0):
        return rng.integers(0, 2, size=(n, 1)).astype(float)


class TwoPointBirth:
    def propose(self, population, rng):
        theta = np.array([1.0 if rng.random() < H[1] else 0.0])
        return theta, self.log_density_n(len(population), theta)

    def log_density(self, population, theta):
        return self.log_density_n(len(population), theta)

    def log_density_n(self, n_pop, theta):
        return math.log(H[int(theta[0])])

    __call__ = log_density_n

    def rows(self, n_pop, values):
        return np.where(values[:, 0] == 1.0, _LOG_H[1], _LOG_H[0])


class FlipMutation:
    def propose(self, theta, population, rng):
        return 1.0 - np.asarray(theta, dtype=float), 0.0, 0.0


def counts_of(values):
    mb = int(np.sum(values[:, 0] == 1.0)) if len(values) else 0
    return len(values) - mb, mb


class ToyTarget(Target):
    def log_density(self, society):
        return log_labeled(*counts_of(society[0].values))

    def evaluator(self, society):
        return ToyEvaluator(self, society)


class ToyEvaluator(Evaluator):
    def __init__(self, target, society, log_density=None, m=None):
        self.target = target
        self.society = society
        self.m = counts_of(society[0].values) if m is None else m
        self.log_density = log_labeled(*self.m)

    def death_log_ratios(self, alpha):
        ma, mb = self.m
        la, lb = log_labeled(ma - 1, mb), log_labeled(ma, mb - 1)
        v = self.society[0].values[:, 0]
        return np.where(v == 1.0, lb, la) - self.log_density

    def birth_log_ratio(self, alpha, theta):
        ma, mb = self.m
        nxt = (ma, mb + 1) if theta[0] == 1.0 else (ma + 1, mb)
        return log_labeled(*nxt) - self.log_density

    def mutation_log_ratio(self, alpha, j, theta):
        ma, mb = self.m
        old = self.society[0].values[j, 0]
        if old == theta[0]:
            return 0.0
        nxt = (ma + 1, mb - 1) if old == 1.0 else (ma - 1, mb + 1)
        return log_labeled(*nxt) - self.log_density

    # counts are updated in place of a recount
    def after_birth(self, alpha, theta, log_ratio=None):
        ma, mb = self.m
        m = (ma, mb + 1) if theta[0] == 1.0 else (ma + 1, mb)
        return ToyEvaluator(self.target, clone_with_birth(self.society, alpha, theta), m=m)

    def after_death(self, alpha, j, log_ratio=None):
        ma, mb = self.m
        m = (ma, mb - 1) if self.society[0].values[j, 0] == 1.0 else (ma - 1, mb)
        return ToyEvaluator(self.target, clone_with_death(self.society, alpha, j), m=m)

    def after_mutation(self, alpha, j, theta, log_ratio=None):
        soc = clone_with_mutation(self.society, alpha, j, theta)
        return ToyEvaluator(self.target, soc, m=counts_of(soc[0].values))


def toy_spec(rates=None):
    spec = SpeciesSpec("toy", ["v"], TwoPointPrior(), rates=rates)
    spec.proposal = SpeciesProposals(TwoPointBirth(), FlipMutation())
    return spec


def toy_population_values(ma, mb):
    return np.array([[0.0]] * ma + [[1.0]] * mb).reshape(-1, 1)


def all_states():
    return list(STATES)


def occupancy(store, burn_in=0.0):
    """Waiting-time weighted mass of every multiset visited by an indexed-store chain."""
    G = store.n_gen + 1
    vals, life = store.arrays(0)
    is_b = vals[:, 0] == 1.0
    out = []
    for mask in (~is_b, is_b):
        delta = np.zeros(G + 1, dtype=np.int64)
        np.add.at(delta, life[mask, 0], 1)
        dead = life[mask, 1]
        np.add.at(delta, dead[dead >= 0], -1)
        out.append(np.cumsum(delta[:G]))
    start = int(burn_in * G)
    ma, mb, tau = out[0][start:], out[1][start:], store.tau[start:]
    mass = {}
    for s in STATES:
        mass[s] = float(tau[(ma == s[0]) & (mb == s[1])].sum())
    total = sum(mass.values())
    return {s: m / total for s, m in mass.items()}


def total_variation(p, q):
    return 0.5 * sum(abs(p.get(s, 0.0) - q.get(s, 0.0)) for s in set(p) | set(q))


def generator(prescription):
    """Continuous-time generator over multisets assembled from the library rate functions."""
    from samsara.model import Population
    from samsara.rates import (
        death_rates_fixed_birth,
        fixed_birth_rate,
        mutation_acceptance,
        split_mutation_rates,
        varying_birth_rate,
        varying_death_rates,
    )

    spec = toy_spec(prescription)
    birth = spec.proposal.birth
    target = ToyTarget()
    index = {s: i for i, s in enumerate(STATES)}
    Q = np.zeros((len(STATES), len(STATES)))
    for s in STATES:
        ma, mb = s
        pop = Population(spec, toy_population_values(ma, mb))
        soc = Society([pop])
        ev = target.evaluator(soc)
        n = ma + mb
        for theta in (np.array([0.0]), np.array([1.0])):
            ratio = ev.birth_log_ratio(0, theta)
            if ratio == -math.inf:
                continue
            lh = birth.log_density_n(n, theta)
            if prescription.kind == "fixed_birth":
                rate = fixed_birth_rate(prescription, ratio) * math.exp(lh)
            else:
                rate = math.exp(lh) * varying_birth_rate(spec, n, theta, ratio, lh)
            nxt = (ma, mb + 1) if theta[0] == 1.0 else (ma + 1, mb)
            Q[index[s], index[nxt]] += rate
        if n:
            ratios = ev.death_log_ratios(0)
            if prescription.kind == "fixed_birth":
                deaths = death_rates_fixed_birth(spec, pop, ratios, birth, prescription.birth_rate)
            else:
                deaths = varying_death_rates(spec, pop, ratios, birth)
            for j, r in enumerate(deaths):
                nxt = (ma, mb - 1) if pop.values[j, 0] == 1.0 else (ma - 1, mb)
                Q[index[s], index[nxt]] += r
            for j in range(n):
                theta = 1.0 - pop.values[j]
                xi = mutation_acceptance(ev.log_density, ev.log_density + ev.mutation_log_ratio(0, j, theta), 0.0, 0.0)
                move, _ = split_mutation_rates(xi, prescription.mutation_rate)
                nxt = (ma + 1, mb - 1) if pop.values[j, 0] == 1.0 else (ma - 1, mb + 1)
                Q[index[s], index[nxt]] += move / n
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q

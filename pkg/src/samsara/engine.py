"""Continuous-time birth-death-mutation driver.

Each generation builds the rate table of the current society, picks a species,
a process and a move by nested categorical draws, applies it, and records the
waiting time ``tau = 1 / sum(R)`` of the state it leaves.

Birth and mutation enter the table at constant rates (the birth cap and
``R_m``).  The candidate of a birth and the proposal of a mutation are drawn
only once their process is selected, and the move then happens with
probability ``rate / cap`` or ``xi``; otherwise the generation is a ``stay``.
The table, and so ``tau``, depends on the state alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelError, Society, make_society
from .mutation import GibbsHyperparams, gibbs_sweep_gmm, mh_mutate_evaluator
from .proposals import SpeciesProposals
from .rates import (
    RateError,
    RatePrescription,
    RateTable,
    SpeciesRates,
    fixed_birth_rate,
    log_death_rates_fixed_birth,
    log_varying_death_rates,
    varying_birth_rate,
)
from .storage import DenseStore, IndexedStore, StoreError

__all__ = [
    "EngineError",
    "ChainConfig",
    "StepRecord",
    "waiting_time",
    "select_transition",
    "build_rate_table",
    "step",
    "run",
    "Chain",
]

log = logging.getLogger("samsara")

PROCESSES = ("birth", "death", "mutation")
_EMPTY = np.empty(0)
_LOG_HEADROOM = 600.0  # largest log rate kept unscaled


class EngineError(RuntimeError):
    """Chain cannot proceed (absorbing state, bad configuration, store failure)."""


@dataclass
class ChainConfig:
    """Settings of one chain.

    ``rates`` is one :class:`RatePrescription` (shared) or one per species;
    ``None`` takes each species' own ``rates`` attribute, falling back to
    fixed birth with ``R_b = 1``.
    """

    n_gen: int
    seed: int | None = 0
    species_scheduling: str = "poisson"
    rates: object = None
    initial_counts: tuple | None = None
    storage: str = "auto"
    sample_dwell: bool = False
    log_every: int = 0
    gibbs_hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.n_gen) != self.n_gen or self.n_gen < 0:
            raise EngineError("n_gen must be a nonnegative integer")
        self.n_gen = int(self.n_gen)
        if self.species_scheduling not in ("poisson", "gibbs_cycle"):
            raise EngineError(f"unknown species scheduling {self.species_scheduling!r}")
        if self.storage not in ("auto", "indexed", "dense"):
            raise EngineError(f"unknown storage mode {self.storage!r}")

    def prescriptions(self, specs) -> list[RatePrescription]:
        if isinstance(self.rates, RatePrescription):
            return [self.rates] * len(specs)
        if self.rates is not None:
            out = list(self.rates)
            if len(out) != len(specs):
                raise EngineError("one rate prescription per species is required")
            return out
        return [s.rates if s.rates is not None else RatePrescription() for s in specs]


@dataclass(frozen=True)
class StepRecord:
    generation: int
    species: int
    process: str
    move: int
    waiting_time: float
    log_target: float


def waiting_time(table: RateTable) -> float:
    """``1 / sum(R)`` over the table."""
    if not table.grand_total > 0:
        raise EngineError("all rates vanish: absorbing state")
    return table.waiting_time


def _categorical(weights, u: float) -> int:
    """Index ``i`` with probability ``weights[i] / sum(weights)``; zero weights are never returned."""
    n = len(weights)
    if n > 32:
        c = np.cumsum(weights)
        i = min(int(np.searchsorted(c, u * c[-1], side="right")), n - 1)
    else:
        total = 0.0
        for w in weights:
            total += w
        target = u * total
        acc = 0.0
        i = n - 1
        for k in range(n):
            acc += weights[k]
            if target < acc:
                i = k
                break
    # rounding can land on a trailing zero-weight entry
    while weights[i] <= 0:
        i -= 1
    return i


def select_transition(table: RateTable, rng: np.random.Generator, scheduling: str = "poisson", generation: int = 0):
    """Draw ``(species, process, move)`` from the table.

    ``process`` is one of ``birth``, ``death``, ``mutation``; the move index
    is the individual for death and mutation (uniform for mutation) and 0
    for birth.
    """
    totals = table._totals
    if not table.grand_total > 0:
        raise EngineError("all rates vanish: absorbing state")
    if scheduling == "gibbs_cycle":
        alpha = generation % len(table.species)
        if totals[alpha] <= 0:
            raise EngineError(f"species {alpha} has zero total rate")
    elif len(totals) == 1:
        alpha = 0
    else:
        alpha = _categorical(totals, rng.random())
    sr = table.species[alpha]
    proc = PROCESSES[_categorical(sr.process_totals, rng.random())]
    if proc == "death":
        move = _categorical(sr.death_rates, rng.random())
    elif proc == "mutation":
        n = sr.n_individuals
        move = int(rng.integers(n)) if n else -1
    else:
        move = 0
    return alpha, proc, move


# ---------------------------------------------------------------------------


def _birth_density(proposals: SpeciesProposals):
    birth = proposals.birth
    return birth if hasattr(birth, "rows") else birth.log_density_n


def build_rate_table(evaluator, proposals, prescriptions, active=None) -> RateTable:
    """Rate table of ``evaluator.society``; only ``active`` species are filled.

    Fixed-birth death rates are formed in log space; when the largest one
    would overflow, every rate of the table is scaled down by a common
    factor so that the selection probabilities stay exact.
    """
    society = evaluator.society
    n_sp = len(society)
    act = range(n_sp) if active is None else list(active)
    log_deaths = []
    top = -math.inf
    for a in range(n_sp):
        pop = society[a]
        presc = prescriptions[a]
        if a not in act or not len(pop):
            log_deaths.append(None)
            continue
        spec = pop.species
        ratios = evaluator.death_log_ratios(a)
        bd = _birth_density(proposals[a])
        if presc.kind == "fixed_birth":
            ld = log_death_rates_fixed_birth(spec, pop, ratios, bd, presc.birth_rate)
        else:
            ld = log_varying_death_rates(spec, pop, ratios, bd)
        m = float(np.maximum.reduce(ld))
        if not m < np.inf:  # also false for nan
            raise RateError(f"non-finite death rate in species {spec.name!r}")
        log_deaths.append(ld)
        top = max(top, m)
    shift = max(0.0, top - _LOG_HEADROOM)
    scale = math.exp(-shift)
    species = []
    for a in range(n_sp):
        pop = society[a]
        presc = prescriptions[a]
        ld = log_deaths[a]
        if ld is None:
            deaths = _EMPTY
        else:
            deaths = np.exp(ld - shift) if shift else np.exp(ld)
        cap = presc.birth_cap * scale if a in act else 0.0
        species.append(SpeciesRates.trusted(cap, deaths, presc.mutation_rate * scale, len(pop)))
    return RateTable(species, None if active is None else act, shift)


class Chain:
    """Mutable chain state: evaluator, proposals, prescriptions and rng."""

    def __init__(self, target, society: Society, cfg: ChainConfig, rng: np.random.Generator, proposals=None):
        self.target = target
        self.cfg = cfg
        self.rng = rng
        specs = society.specs
        self.specs = specs
        self.prescriptions = cfg.prescriptions(specs)
        self.proposals = list(proposals) if proposals is not None else [s.proposal for s in specs]
        for s, p in zip(specs, self.proposals):
            if p is None:
                raise EngineError(f"species {s.name!r} has no proposals")
        self.gibbs = {}
        for a, s in enumerate(specs):
            if s.mutation_sampler == "gibbs_gmm":
                if target.data.kind != "samples":
                    raise EngineError("gibbs_gmm needs a samples dataset")
                hyper = cfg.gibbs_hyper.get(a) or GibbsHyperparams.from_prior(s.prior)
                self.gibbs[a] = hyper
            elif s.mutation_sampler != "mh":
                raise EngineError(f"unknown mutation sampler {s.mutation_sampler!r}")
        self.evaluator = target.evaluator(society)
        self._cache = self._cache_key = self._cache_ev = None
        if not math.isfinite(self.evaluator.log_density):
            raise EngineError("initial society has zero target density")

    @property
    def society(self) -> Society:
        return self.evaluator.society

    def table(self, generation: int) -> RateTable:
        active = None
        if self.cfg.species_scheduling == "gibbs_cycle":
            active = [generation % len(self.specs)]
        key = (id(self.evaluator), None if active is None else active[0])
        # a stay leaves the evaluator, and so the table, unchanged
        if self._cache_key != key or self._cache_ev is not self.evaluator:
            self._cache = build_rate_table(self.evaluator, self.proposals, self.prescriptions, active)
            self._cache_key = key
            self._cache_ev = self.evaluator
        return self._cache

    def advance(self, generation: int):
        """One generation from state ``generation - 1``.

        Returns ``(tau_of_previous_state, alpha, process, move, event)``; the
        event is the storage tuple of what happened.
        """
        table = self.table(generation - 1)
        tau = waiting_time(table)
        alpha, proc, move = select_transition(table, self.rng, self.cfg.species_scheduling, generation - 1)
        ev = self.evaluator
        rng = self.rng
        presc = self.prescriptions[alpha]
        if proc == "birth":
            pop = ev.society[alpha]
            theta, log_h = self.proposals[alpha].propose_birth(pop, rng)
            ratio = ev.birth_log_ratio(alpha, theta)
            if presc.kind == "fixed_birth":
                accept = fixed_birth_rate(presc, ratio) > 0
            else:
                rate = varying_birth_rate(pop.species, len(pop), theta, ratio, log_h)
                accept = rate >= 1.0 or rng.random() < rate
            if accept:
                self.evaluator = ev.after_birth(alpha, theta, ratio)
                return tau, alpha, "birth", len(pop), ("birth", alpha, np.asarray(theta, dtype=float))
            return tau, alpha, "stay", 0, ("stay", alpha)
        if proc == "death":
            self.evaluator = ev.after_death(alpha, move)
            return tau, alpha, "death", move, ("death", alpha, move)
        # mutation
        if move < 0:
            return tau, alpha, "stay", 0, ("stay", alpha)
        if alpha in self.gibbs:
            soc = gibbs_sweep_gmm(ev.society, self.target.data, self.gibbs[alpha], rng, alpha)
            new = self.target.evaluator(soc)
            if not math.isfinite(new.log_density):
                return tau, alpha, "stay", 0, ("stay", alpha)
            self.evaluator = new
            return tau, alpha, "mutation", -1, ("replace", alpha, soc[alpha].values)
        new_ev, accepted, _ = mh_mutate_evaluator(ev, alpha, move, self.proposals[alpha], rng)
        if not accepted:
            return tau, alpha, "stay", move, ("stay", alpha)
        self.evaluator = new_ev
        return tau, alpha, "mutation", move, ("mutation", alpha, move, new_ev.society[alpha].values[move])


def step(state: Society, cfg: ChainConfig, target, proposals=None, rng: np.random.Generator | None = None,
         generation: int = 1):
    """Advance ``state`` by one generation; returns ``(society, StepRecord)``."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    chain = Chain(target, state, cfg, rng, proposals)
    tau, alpha, proc, move, _ = chain.advance(generation)
    return chain.society, StepRecord(generation, alpha, proc, move, tau, chain.evaluator.log_density)


def _make_store(cfg: ChainConfig, specs, chain: Chain):
    needs_dense = bool(chain.gibbs) or any(s.simplex for s in specs)
    mode = cfg.storage
    if mode == "auto":
        mode = "dense" if needs_dense else "indexed"
    if mode == "indexed" and needs_dense:
        raise EngineError("mixture species and Gibbs sweeps change several rows at once; use dense storage")
    return (DenseStore if mode == "dense" else IndexedStore)(specs)


def run(cfg: ChainConfig, target, specs=None, society: Society | None = None, proposals=None):
    """Run ``cfg.n_gen`` generations and return the filled store.

    The start is ``society`` if given, else ``cfg.initial_counts`` prior draws
    (default: empty populations).  ``tau`` of every state, including the
    last, is stored at its generation.
    """
    root = np.random.SeedSequence(cfg.seed)
    chain_seq, dwell_seq = root.spawn(2)
    rng = np.random.default_rng(chain_seq)
    dwell_rng = np.random.default_rng(dwell_seq) if cfg.sample_dwell else None
    if society is None:
        if specs is None:
            raise EngineError("run needs species specs or an initial society")
        counts = cfg.initial_counts if cfg.initial_counts is not None else (0,) * len(specs)
        society = make_society(specs, counts, rng)
    specs = society.specs
    chain = Chain(target, society, cfg, rng, proposals)
    store = _make_store(cfg, specs, chain)
    dense = isinstance(store, DenseStore)
    store.record_initial(chain.society, chain.evaluator.log_density)

    def dwell(tau):
        return float(dwell_rng.exponential(tau)) if dwell_rng is not None else tau

    g = 0
    try:
        for g in range(1, cfg.n_gen + 1):
            tau, alpha, proc, move, event = chain.advance(g)
            store.set_waiting_time(g - 1, tau if dwell_rng is None else float(dwell_rng.exponential(tau)))
            if dense:
                store.record_event(g, event, None, chain.evaluator.log_density, society=chain.society)
            else:
                store.record_event(g, event, None, chain.evaluator.log_density)
            if cfg.log_every and g % cfg.log_every == 0:
                log.info("gen %d  N=%s  log_target=%.6g  tau=%.4g", g, chain.society.counts,
                         chain.evaluator.log_density, tau)
        g = cfg.n_gen
        store.set_waiting_time(g, dwell(waiting_time(chain.table(g))))
    except (RateError, ModelError, StoreError, EngineError) as exc:
        raise EngineError(f"generation {g}: {exc}") from exc
    store.config_echo = {
        "n_gen": cfg.n_gen,
        "seed": cfg.seed,
        "species_scheduling": cfg.species_scheduling,
        "rates": [str(p) for p in chain.prescriptions],
        "sample_dwell": cfg.sample_dwell,
    }
    return store

"""Chain persistence.

Two layouts share one interface:

* :class:`IndexedStore` keeps every distinct individual once, with the
  generation it entered (``g_b``) and left (``g_d``, -1 while alive).  A
  mutation closes the old row and opens a new one at the same generation.
* :class:`DenseStore` keeps a full snapshot per generation; needed when
  several individuals change in one generation (blocked Gibbs sweeps).

Both record, per generation, the waiting time and log target of the state
and the code of the event that produced it.

On disk a store is a directory::

    manifest.json                 layout, species, n_gen, config echo
    generations.bin               (tau f8, log_target f8, event i8) per generation
    <species>.values.bin          float64 rows, little-endian, row-major
    <species>.lifetimes.bin       int64 (g_b, g_d) pairs        [indexed]
    <species>.counts.bin          int64 population size per gen [dense]
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable

import numpy as np

from .model import Population, Society, SpeciesSpec

__all__ = [
    "StoreError",
    "IndexedStore",
    "DenseStore",
    "ChainStore",
    "open_store",
    "memory_estimates",
    "EVENT_CODES",
]

FORMAT = "samsara-store/1"
EVENT_CODES = {"init": 0, "birth": 1, "death": 2, "mutation": 3, "stay": 4, "replace": 5}
EVENT_NAMES = {v: k for k, v in EVENT_CODES.items()}
GEN_DTYPE = np.dtype([("tau", "<f8"), ("log_target", "<f8"), ("event", "<i8")])


class StoreError(RuntimeError):
    """Inconsistent event stream or unreadable store."""


def encode_event(process: str, species: int) -> int:
    return EVENT_CODES[process] + 8 * species


def decode_event(code: int) -> tuple[str, int]:
    return EVENT_NAMES[int(code) % 8], int(code) // 8


class ChainStore:
    """Common per-generation bookkeeping."""

    kind = "base"

    def __init__(self, specs: list[SpeciesSpec] | None = None, species_names=None, param_names=None):
        if specs is not None:
            species_names = [s.name for s in specs]
            param_names = [list(s.param_names) for s in specs]
        self.specs = specs
        self.species_names = list(species_names)
        self.param_names = [list(p) for p in param_names]
        self._tau: list[float] = []
        self._log_target: list[float] = []
        self._event: list[int] = []
        self.config_echo: dict = {}
        self._frozen = False

    # -- generation records -------------------------------------------------

    @property
    def n_gen(self) -> int:
        """Index of the last recorded generation (0 when only the start is stored)."""
        return len(self._event) - 1

    @property
    def n_species(self) -> int:
        return len(self.species_names)

    def _push_generation(self, generation, code, tau, log_target):
        if generation != len(self._event):
            raise StoreError(f"expected generation {len(self._event)}, got {generation}")
        self._event.append(code)
        self._tau.append(math.nan if tau is None else float(tau))
        self._log_target.append(float(log_target))

    def set_waiting_time(self, generation: int, tau: float):
        self._tau[generation] = float(tau)

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self._tau, dtype=float)

    @property
    def log_target(self) -> np.ndarray:
        return np.asarray(self._log_target, dtype=float)

    @property
    def events(self) -> np.ndarray:
        return np.asarray(self._event, dtype=np.int64)

    def _check_generation(self, g):
        if not 0 <= g <= self.n_gen:
            raise StoreError(f"generation {g} out of range 0..{self.n_gen}")

    def _population(self, alpha, values):
        if self.specs is not None:
            return Population(self.specs[alpha], values)
        spec = SpeciesSpec(self.species_names[alpha], self.param_names[alpha], _NullPrior(len(self.param_names[alpha])))
        return Population(spec, values)

    def _spec_like(self):
        if self.specs is None:
            self.specs = [
                SpeciesSpec(n, p, _NullPrior(len(p))) for n, p in zip(self.species_names, self.param_names)
            ]
        return self.specs

    # -- persistence ---------------------------------------------------------

    def _manifest(self) -> dict:
        return {
            "format": FORMAT,
            "store_kind": self.kind,
            "n_gen": self.n_gen,
            "species": [
                {"name": n, "param_names": p} for n, p in zip(self.species_names, self.param_names)
            ],
            "config": self.config_echo,
        }

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        gens = np.empty(len(self._event), dtype=GEN_DTYPE)
        gens["tau"] = self._tau
        gens["log_target"] = self._log_target
        gens["event"] = self._event
        gens.tofile(os.path.join(path, "generations.bin"))
        self._save_species(path)
        with open(os.path.join(path, "manifest.json"), "w") as fh:
            json.dump(self._manifest(), fh, indent=2, sort_keys=True)

    @staticmethod
    def load(path) -> "ChainStore":
        return open_store(path)


class _NullPrior:
    kind = "custom"
    proper = False

    def __init__(self, n):
        self.bounds = [None] * n


# ---------------------------------------------------------------------------


class IndexedStore(ChainStore):
    """Unique individuals with birth/death generations."""

    kind = "indexed"

    def __init__(self, specs=None, species_names=None, param_names=None):
        super().__init__(specs, species_names, param_names)
        self._values = [[] for _ in self.species_names]
        self._born = [[] for _ in self.species_names]
        self._died = [[] for _ in self.species_names]
        self._alive = [[] for _ in self.species_names]
        self._arrays = None

    def record_initial(self, society: Society, log_target: float, tau: float | None = None):
        if self._event:
            raise StoreError("initial state already recorded")
        self._push_generation(0, EVENT_CODES["init"], tau, log_target)
        for a, pop in enumerate(society):
            for theta in pop.values:
                self._open_row(a, theta, 0)

    def _open_row(self, a, theta, g):
        self._values[a].append(np.array(theta, dtype=float))
        self._born[a].append(g)
        self._died[a].append(-1)
        self._alive[a].append(len(self._values[a]) - 1)
        self._arrays = None

    def _close_slot(self, a, j, g):
        alive = self._alive[a]
        if not -len(alive) <= j < len(alive):
            raise StoreError(f"death of non-alive individual (species {a}, slot {j}) at generation {g}")
        row = alive[j]
        if self._died[a][row] != -1:
            raise StoreError(f"row {row} of species {a} already dead")
        self._died[a][row] = g
        self._arrays = None
        return row

    def record_event(self, generation: int, event: tuple, tau: float | None = None, log_target: float = math.nan):
        """Apply ``event`` producing generation ``generation``.

        ``event`` is ``("birth", a, theta)``, ``("death", a, j)``,
        ``("mutation", a, j, theta)`` or ``("stay", a)``; ``j`` is the slot
        of the individual in the current population order.
        """
        kind, a = event[0], event[1]
        if kind == "replace":
            raise StoreError("indexed storage cannot record whole-population updates; use dense storage")
        self._push_generation(generation, encode_event(kind, a), tau, log_target)
        if kind == "birth":
            self._open_row(a, event[2], generation)
        elif kind == "death":
            self._close_slot(a, event[2], generation)
            self._alive[a].pop(event[2])
        elif kind == "mutation":
            j = event[2]
            self._close_slot(a, j, generation)
            self._values[a].append(np.array(event[3], dtype=float))
            self._born[a].append(generation)
            self._died[a].append(-1)
            self._alive[a][j] = len(self._values[a]) - 1
        elif kind != "stay":
            raise StoreError(f"unknown event {kind!r}")

    def arrays(self, alpha: int) -> tuple[np.ndarray, np.ndarray]:
        """``(values, lifetimes)`` of species ``alpha``."""
        if self._arrays is None:
            self._arrays = {}
        if alpha not in self._arrays:
            npar = len(self.param_names[alpha])
            vals = np.array(self._values[alpha], dtype=float).reshape(-1, npar)
            life = np.column_stack([
                np.asarray(self._born[alpha], dtype=np.int64),
                np.asarray(self._died[alpha], dtype=np.int64),
            ]).reshape(-1, 2)
            self._arrays[alpha] = (vals, life)
        return self._arrays[alpha]

    def values(self, alpha):
        return self.arrays(alpha)[0]

    def lifetimes(self, alpha):
        return self.arrays(alpha)[1]

    def n_unique(self, alpha) -> int:
        return len(self._values[alpha])

    def _alive_mask(self, alpha, g):
        life = self.lifetimes(alpha)
        return (life[:, 0] <= g) & ((life[:, 1] == -1) | (g < life[:, 1]))

    def society_at(self, generation: int) -> Society:
        self._check_generation(generation)
        self._spec_like()
        pops = []
        for a in range(self.n_species):
            vals = self.values(a)[self._alive_mask(a, generation)]
            pops.append(self._population(a, vals))
        return Society(pops)

    def counts(self) -> np.ndarray:
        """Population size of every species at every generation, shape ``(n_gen+1, n_species)``."""
        G = self.n_gen + 1
        out = np.zeros((G, self.n_species), dtype=np.int64)
        for a in range(self.n_species):
            life = self.lifetimes(a)
            delta = np.zeros(G + 1, dtype=np.int64)
            np.add.at(delta, life[:, 0], 1)
            dead = life[:, 1][life[:, 1] >= 0]
            np.add.at(delta, dead, -1)
            out[:, a] = np.cumsum(delta[:G])
        return out

    def iter_rows(self, alpha: int, generations: Iterable[int]):
        """Yield ``(row_ids, values)`` of species ``alpha`` at each (nondecreasing) generation."""
        life = self.lifetimes(alpha)
        vals = self.values(alpha)
        by_birth = np.argsort(life[:, 0], kind="stable")
        died = np.where(life[:, 1] == -1, np.iinfo(np.int64).max, life[:, 1])
        by_death = np.argsort(died, kind="stable")
        alive: set[int] = set()
        ib = idd = 0
        last = -1
        for g in generations:
            if g < last:
                raise StoreError("generations must be nondecreasing")
            self._check_generation(g)
            last = g
            while ib < len(by_birth) and life[by_birth[ib], 0] <= g:
                alive.add(int(by_birth[ib]))
                ib += 1
            while idd < len(by_death) and died[by_death[idd]] <= g:
                alive.discard(int(by_death[idd]))
                idd += 1
            rows = np.array(sorted(alive), dtype=np.int64)
            yield rows, vals[rows]

    def iter_populations(self, alpha: int, generations: Iterable[int]):
        """Yield the value array of species ``alpha`` at each (nondecreasing) generation."""
        for _, v in self.iter_rows(alpha, generations):
            yield v

    def weighted_individuals(self, alpha: int, generations: np.ndarray, weights: np.ndarray):
        """Distinct individuals of ``alpha`` with summed weight over the generations they were alive in."""
        generations = np.asarray(generations, dtype=np.int64)
        order = np.argsort(generations, kind="stable")
        g = generations[order]
        cw = np.concatenate([[0.0], np.cumsum(np.asarray(weights, dtype=float)[order])])
        life = self.lifetimes(alpha)
        end = np.where(life[:, 1] == -1, np.iinfo(np.int64).max, life[:, 1])
        lo = np.searchsorted(g, life[:, 0], side="left")
        hi = np.searchsorted(g, end, side="left")
        w = cw[hi] - cw[lo]
        keep = w > 0
        return self.values(alpha)[keep], w[keep]

    def _save_species(self, path):
        for a, name in enumerate(self.species_names):
            vals, life = self.arrays(a)
            vals.astype("<f8").tofile(os.path.join(path, f"{name}.values.bin"))
            life.astype("<i8").tofile(os.path.join(path, f"{name}.lifetimes.bin"))


class DenseStore(ChainStore):
    """Full snapshot of every generation."""

    kind = "dense"

    def __init__(self, specs=None, species_names=None, param_names=None):
        super().__init__(specs, species_names, param_names)
        self._chunks = [[] for _ in self.species_names]
        self._counts = [[] for _ in self.species_names]
        self._current = None
        self._arrays = None

    def record_initial(self, society: Society, log_target: float, tau: float | None = None):
        if self._event:
            raise StoreError("initial state already recorded")
        self._push_generation(0, EVENT_CODES["init"], tau, log_target)
        self._current = [np.array(p.values, dtype=float) for p in society]
        self._snapshot()

    def _snapshot(self):
        for a, vals in enumerate(self._current):
            self._chunks[a].append(vals)
            self._counts[a].append(len(vals))
        self._arrays = None

    def record_event(self, generation: int, event: tuple, tau: float | None = None, log_target: float = math.nan,
                     society: Society | None = None):
        """Apply ``event`` (see :meth:`IndexedStore.record_event`); ``("replace", a, values)`` swaps a population."""
        kind, a = event[0], event[1]
        self._push_generation(generation, encode_event(kind, a), tau, log_target)
        cur = list(self._current)
        if kind == "birth":
            cur[a] = np.vstack([cur[a], np.asarray(event[2], dtype=float)[None, :]])
        elif kind == "death":
            j = event[2]
            if not -len(cur[a]) <= j < len(cur[a]):
                raise StoreError(f"death of non-alive individual (species {a}, slot {j}) at generation {generation}")
            cur[a] = np.delete(cur[a], j, axis=0)
        elif kind == "mutation":
            cur[a] = cur[a].copy()
            cur[a][event[2]] = event[3]
        elif kind == "replace":
            cur[a] = np.array(event[2], dtype=float).reshape(-1, len(self.param_names[a]))
        elif kind != "stay":
            raise StoreError(f"unknown event {kind!r}")
        if society is not None:
            # the engine knows the exact post-move values (e.g. renormalized weights)
            cur = [np.array(p.values, dtype=float) for p in society]
        self._current = cur
        self._snapshot()

    def arrays(self, alpha):
        """``(values, counts)``: concatenated snapshots and per-generation sizes."""
        if self._arrays is None:
            self._arrays = {}
        if alpha not in self._arrays:
            npar = len(self.param_names[alpha])
            chunks = self._chunks[alpha]
            vals = np.concatenate(chunks).reshape(-1, npar) if chunks else np.empty((0, npar))
            self._chunks[alpha] = [vals] if len(vals) else []
            counts = np.asarray(self._counts[alpha], dtype=np.int64)
            self._arrays[alpha] = (vals, counts, np.concatenate([[0], np.cumsum(counts)]))
        return self._arrays[alpha][:2]

    def _offsets(self, alpha):
        self.arrays(alpha)
        return self._arrays[alpha][2]

    def values_at(self, alpha, g):
        vals, counts = self.arrays(alpha)
        off = self._offsets(alpha)
        return vals[off[g]:off[g + 1]]

    def society_at(self, generation: int) -> Society:
        self._check_generation(generation)
        self._spec_like()
        return Society([self._population(a, self.values_at(a, generation)) for a in range(self.n_species)])

    def counts(self) -> np.ndarray:
        return np.column_stack([self.arrays(a)[1] for a in range(self.n_species)]).reshape(-1, self.n_species)

    def iter_populations(self, alpha, generations):
        for g in generations:
            self._check_generation(g)
            yield self.values_at(alpha, g)

    def iter_rows(self, alpha, generations):
        """Dense snapshots carry no row identity: rows are numbered by position."""
        for g in generations:
            v = self.values_at(alpha, g)
            yield np.arange(len(v)), v

    def weighted_individuals(self, alpha, generations, weights):
        generations = np.asarray(generations, dtype=np.int64)
        counts = self.arrays(alpha)[1]
        off = self._offsets(alpha)
        vals = self.arrays(alpha)[0]
        idx = np.concatenate([np.arange(off[g], off[g + 1]) for g in generations]) if len(generations) else np.empty(0, int)
        w = np.repeat(np.asarray(weights, dtype=float), counts[generations])
        return vals[idx.astype(np.int64)], w

    def _save_species(self, path):
        for a, name in enumerate(self.species_names):
            vals, counts = self.arrays(a)
            vals.astype("<f8").tofile(os.path.join(path, f"{name}.values.bin"))
            counts.astype("<i8").tofile(os.path.join(path, f"{name}.counts.bin"))


def open_store(path) -> ChainStore:
    """Load a store directory written by :meth:`ChainStore.save`."""
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise StoreError(f"no store manifest at {mpath}") from exc
    if manifest.get("format") != FORMAT:
        raise StoreError(f"unsupported store format {manifest.get('format')!r}")
    names = [s["name"] for s in manifest["species"]]
    params = [s["param_names"] for s in manifest["species"]]
    kind = manifest["store_kind"]
    cls = {"indexed": IndexedStore, "dense": DenseStore}.get(kind)
    if cls is None:
        raise StoreError(f"unknown store kind {kind!r}")
    store = cls(species_names=names, param_names=params)
    gens = np.fromfile(os.path.join(path, "generations.bin"), dtype=GEN_DTYPE)
    if len(gens) != manifest["n_gen"] + 1:
        raise StoreError("generation record length disagrees with manifest")
    store._tau = gens["tau"].astype(float).tolist()
    store._log_target = gens["log_target"].astype(float).tolist()
    store._event = gens["event"].astype(np.int64).tolist()
    store.config_echo = manifest.get("config", {})
    for a, name in enumerate(names):
        npar = len(params[a])
        vals = np.fromfile(os.path.join(path, f"{name}.values.bin"), dtype="<f8").reshape(-1, npar)
        if kind == "indexed":
            life = np.fromfile(os.path.join(path, f"{name}.lifetimes.bin"), dtype="<i8").reshape(-1, 2)
            store._values[a] = list(vals)
            store._born[a] = life[:, 0].tolist()
            store._died[a] = life[:, 1].tolist()
            store._alive[a] = [int(i) for i in np.flatnonzero(life[:, 1] == -1)]
        else:
            counts = np.fromfile(os.path.join(path, f"{name}.counts.bin"), dtype="<i8")
            store._chunks[a] = [vals] if len(vals) else []
            store._counts[a] = counts.tolist()
    return store


def memory_estimates(n_gen: int, nbar, n_par, acceptance) -> tuple[float, float]:
    """Bytes for dense and indexed storage.

    ``M_full = n_gen * sum(nbar * n_par * 8)`` and
    ``M_opt = n_gen * sum(acceptance * (n_par + 16))``, the second taken
    as printed (16 bytes for the two dates).
    """
    nbar = np.atleast_1d(np.asarray(nbar, dtype=float))
    n_par = np.atleast_1d(np.asarray(n_par, dtype=float))
    acc = np.broadcast_to(np.asarray(acceptance, dtype=float), nbar.shape)
    if np.any(nbar < 0) or np.any(n_par < 0) or np.any(acc < 0) or n_gen < 0:
        raise ValueError("memory estimate inputs must be nonnegative")
    m_full = float(n_gen * np.sum(nbar * n_par * 8.0))
    m_opt = float(n_gen * np.sum(acc * (n_par + 16.0)))
    return m_full, m_opt

"""Continuous-time birth-death-mutation MCMC for posteriors of unknown dimension."""

from .engine import ChainConfig, run, step
from .model import (
    GMMConjugatePrior,
    NumberPrior,
    Population,
    Society,
    SpeciesSpec,
    UniformBoxPrior,
    make_society,
)
from .rates import RatePrescription
from .storage import DenseStore, IndexedStore, open_store

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "run",
    "step",
    "GMMConjugatePrior",
    "NumberPrior",
    "Population",
    "Society",
    "SpeciesSpec",
    "UniformBoxPrior",
    "make_society",
    "RatePrescription",
    "DenseStore",
    "IndexedStore",
    "open_store",
]

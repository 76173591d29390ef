"""Benchmark problems: analytic mixture, sines plus Lorentzians, 1-D Gaussian mixture.

``paper`` scale follows the published setups.  ``desk`` scale shrinks the
time-series problem to 3 sines and 2 Lorentzians on 2000 samples so that it
runs in minutes; its priors are rescaled as described in
:func:`sine_lor_priors`.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .model import GMMConjugatePrior, ModelError, NumberPrior, SpeciesSpec, UniformBoxPrior
from .proposals import ProposalConfig, build_proposals
from .rates import RatePrescription
from .targets import (
    AnalyticTarget,
    AnalyticTargetConfig,
    Dataset,
    GMMTarget,
    TimeseriesTarget,
    lorentzian_template,
    sine_template,
)

__all__ = [
    "Benchmark",
    "generate_benchmark",
    "analytic_species",
    "sine_lor_priors",
    "gmm_truth",
    "YEAR",
]

YEAR = 365.25 * 86400.0
SINE_LOR_NOISE_VARIANCE = 1e-45
LOR_AMPLITUDE_RANGE = (1e-22, 1e-20)
GMM_WEIGHTS = (0.1, 0.6, 0.3)
GMM_MEANS = (2.0, 3.0, 0.0)
GMM_SIGMAS = (0.05, 1.0, 0.4)


@dataclass
class Benchmark:
    kind: str
    scale: str
    seed: int
    specs: list
    target: object
    dataset: Dataset
    truth: dict = field(default_factory=dict)
    n_gen: int = 10_000
    rates: object = None
    initial_counts: tuple = ()

    def save(self, out_dir):
        """Write the injected data (if any) and the truth record."""
        os.makedirs(out_dir, exist_ok=True)
        if self.dataset.kind != "none":
            self.dataset.to_csv(os.path.join(out_dir, "data.csv"))
        with open(os.path.join(out_dir, "truth.json"), "w") as fh:
            json.dump({"kind": self.kind, "scale": self.scale, "seed": self.seed, **self.truth}, fh, indent=2)


def _attach(spec, prior, cfg, rates):
    spec.proposal = build_proposals(prior, cfg, spec.n_par)
    spec.rates = rates
    return spec


# ---------------------------------------------------------------------------
# analytic
# ---------------------------------------------------------------------------

ANALYTIC_BOUNDS = [(-5.0, 4.0), (-8.0, 4.0)]


def analytic_species(sigma=(0.5, 0.3), rates: RatePrescription | None = None) -> SpeciesSpec:
    prior = UniformBoxPrior(ANALYTIC_BOUNDS)
    spec = SpeciesSpec("point", ["theta1", "theta2"], prior)
    return _attach(spec, prior, ProposalConfig("prior", "gaussian", tuple(sigma)), rates or RatePrescription())


def _analytic(scale, seed, noise):
    cfg = AnalyticTargetConfig()
    spec = analytic_species()
    return Benchmark("analytic", scale, seed, [spec], AnalyticTarget(cfg), Dataset(),
                     {"nbar": cfg.nbar}, n_gen=1_000_000 if scale == "desk" else 10_000_000,
                     rates=spec.rates, initial_counts=(0,))


# ---------------------------------------------------------------------------
# sines and Lorentzians
# ---------------------------------------------------------------------------


def sine_lor_priors(scale: str):
    """Observation setup and priors.

    Paper scale: T_obs = 0.1 yr at 500 s cadence and the published ranges.
    Desk scale keeps the cadence and the noise level on 2000 samples; the
    frequency derivative range is rescaled with the new T_obs
    (``1/T^2 .. 10/T^2``), the log-frequency range is cut to one decade, and
    the log-amplitude range is raised by ``log sqrt(paper T / desk T)`` so
    that a source keeps its signal-to-noise ratio on the shorter series.
    """
    dt = 500.0
    if scale == "paper":
        n_t = int(0.1 * YEAR / dt)
        sine = [(-54.5, -52.5), (math.log(3e-5), math.log(1e-3)), (math.log(1e-13), math.log(1e-12)), (0.0, 2 * math.pi)]
    elif scale == "desk":
        n_t = 2000
        t_obs = n_t * dt
        shift = 0.5 * math.log(int(0.1 * YEAR / dt) / n_t)
        sine = [(-54.5 + shift, -52.5 + shift), (math.log(3e-5), math.log(3e-4)),
                (math.log(1.0 / t_obs**2), math.log(10.0 / t_obs**2)), (0.0, 2 * math.pi)]
    else:
        raise ModelError(f"unknown scale {scale!r}")
    t_obs = n_t * dt
    lor = [LOR_AMPLITUDE_RANGE, (1e4, 2e4), (0.0, t_obs)]
    return dt, n_t, sine, lor


def sine_lor_species(scale: str, rates: RatePrescription | None = None, mutation: str = "fisher"):
    """Sine and Lorentzian species.

    ``mutation = "fisher"`` scales each move by the signal-to-noise ratio of
    the moving source; ``"gaussian"`` uses fixed widths of order the
    posterior scale at the largest amplitudes.  Both mix coarser and finer
    moves.
    """
    dt, n_t, sine_b, lor_b = sine_lor_priors(scale)
    rates = rates or RatePrescription()
    sp = UniformBoxPrior(sine_b)
    lp = UniformBoxPrior(lor_b)
    sine = SpeciesSpec("sine", ["logA", "logf", "logfdot", "phi"], sp, template=sine_template)
    lor = SpeciesSpec("lor", ["A", "w", "t0"], lp, template=lorentzian_template)
    t_obs = n_t * dt
    if mutation == "fisher":
        grid = Dataset.timeseries(np.arange(n_t) * dt, np.zeros(n_t), SINE_LOR_NOISE_VARIANCE)
        cfg = ProposalConfig("prior", "fisher", scales=(10.0, 1.0, 0.1))
        sine.proposal = build_proposals(sp, cfg, 4, sine_template, grid)
        lor.proposal = build_proposals(lp, cfg, 3, lorentzian_template, grid)
        sine.rates = lor.rates = rates
        return [sine, lor]
    sine_sigma = (0.02, 0.2 / (t_obs * math.exp(sine_b[1][0])), 0.02, 0.05)
    lor_sigma = (1e-23, 30.0, 30.0)
    scales = (100.0, 10.0, 1.0, 0.1)
    _attach(sine, sp, ProposalConfig("prior", "gaussian", sine_sigma, scales=scales), rates)
    _attach(lor, lp, ProposalConfig("prior", "gaussian", lor_sigma, scales=scales), rates)
    return [sine, lor]


def _draw_sines(rng, bounds, n, t_obs):
    """Injected sines from the upper half of the amplitude range with well separated frequencies."""
    out = []
    while len(out) < n:
        la = rng.uniform(0.5 * (bounds[0][0] + bounds[0][1]), bounds[0][1])
        lf = rng.uniform(bounds[1][0] + 0.1, bounds[1][1] - 0.1)
        lfd = rng.uniform(*bounds[2])
        ph = rng.uniform(*bounds[3])
        f = math.exp(lf)
        if all(abs(f - math.exp(o[1])) > 20.0 / t_obs for o in out):
            out.append([la, lf, lfd, ph])
    return np.array(out)


def _draw_lors(rng, bounds, n, t_obs):
    """Injected Lorentzians from the amplitude prior with well separated centres."""
    out = []
    while len(out) < n:
        a = rng.uniform(*bounds[0])
        w = rng.uniform(*bounds[1])
        t0 = rng.uniform(3 * bounds[1][1], t_obs - 3 * bounds[1][1])
        if all(abs(t0 - o[2]) > 6 * bounds[1][1] for o in out):
            out.append([a, w, t0])
    return np.array(out)


def _sine_lor(scale, seed, noise):
    rng = np.random.default_rng(seed)
    dt, n_t, sine_b, lor_b = sine_lor_priors(scale)
    t_obs = n_t * dt
    n_sine, n_lor = (3, 2) if scale == "desk" else (15, 5)
    sines = _draw_sines(rng, sine_b, n_sine, t_obs)
    lors = _draw_lors(rng, lor_b, n_lor, t_obs)
    times = np.arange(n_t) * dt
    signal = np.zeros(n_t)
    for th in sines:
        signal += sine_template(times, th)
    for th in lors:
        signal += lorentzian_template(times, th)
    c = SINE_LOR_NOISE_VARIANCE
    if noise:
        signal = signal + rng.normal(0.0, math.sqrt(c), n_t)
    data = Dataset.timeseries(times, signal, c)
    specs = sine_lor_species(scale)
    truth = {"sine": sines.tolist(), "lor": lors.tolist(), "noise": bool(noise), "noise_variance": c}
    return Benchmark("sine_lor", scale, seed, specs, TimeseriesTarget(data), data, truth,
                     n_gen=1_000_000 if scale == "desk" else 10_000_000,
                     rates=[s.rates for s in specs], initial_counts=(0, 0))


# ---------------------------------------------------------------------------
# Gaussian mixture
# ---------------------------------------------------------------------------


def gmm_truth():
    return {"weights": list(GMM_WEIGHTS), "means": list(GMM_MEANS), "sigmas": list(GMM_SIGMAS)}


def gmm_draws(rng, n):
    comp = rng.choice(3, size=n, p=GMM_WEIGHTS)
    return rng.normal(np.array(GMM_MEANS)[comp], np.array(GMM_SIGMAS)[comp])


GMM_MAX_COMPONENTS = 20


def gmm_species(points, rates: RatePrescription | None = None, max_components: int = GMM_MAX_COMPONENTS) -> SpeciesSpec:
    """Mixture species with a flat number prior on ``0..max_components``.

    With symmetric ``Dir(1/K)`` weights the marginal likelihood tends to a
    positive constant as ``K`` grows, so a flat prior over all integers
    leaves the posterior on ``K`` improper.  The bound keeps it proper and
    leaves its shape below the bound unchanged.
    """
    prior = GMMConjugatePrior.from_data(points)
    nprior = NumberPrior("pmf", pmf=tuple([1.0 / (max_components + 1)] * (max_components + 1)))
    spec = SpeciesSpec("mix", ["weight", "mean", "var"], prior, nprior, z_factor_kind="gmm",
                       mutation_sampler="gibbs_gmm")
    return _attach(spec, prior, ProposalConfig("niw_beta", "none"), rates or RatePrescription())


def _gmm(scale, seed, noise):
    rng = np.random.default_rng(seed)
    n = 1000 if scale == "paper" else 300
    points = gmm_draws(rng, n)
    data = Dataset.samples(points)
    spec = gmm_species(points)
    return Benchmark("gmm", scale, seed, [spec], GMMTarget(data), data, {**gmm_truth(), "n_points": n},
                     n_gen=200_000 if scale == "paper" else 50_000, rates=spec.rates, initial_counts=(1,))


def generate_benchmark(kind: str, scale: str = "desk", seed: int = 0, noise: bool = False) -> Benchmark:
    """Build a seeded benchmark problem (species, target, injected data and truth)."""
    if scale not in ("paper", "desk"):
        raise ModelError(f"unknown scale {scale!r}")
    makers = {"analytic": _analytic, "sine_lor": _sine_lor, "gmm": _gmm}
    if kind not in makers:
        raise ModelError(f"unknown benchmark {kind!r}")
    return makers[kind](scale, seed, noise)

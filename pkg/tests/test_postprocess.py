import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samsara.benchmarks import analytic_species
from samsara.engine import ChainConfig, run
from samsara.model import Population, Society
from samsara.postprocess import (
    PostprocessError,
    WeightedSamples,
    export_for_catalog,
    mixture_density_band,
    number_posterior,
    parameter_distribution,
    rb_estimate,
    signal_band,
    summarize,
    thinned_generations,
    weighted_histogram,
    weighted_quantiles,
    write_catalog_json,
    write_number_pmf_csv,
)
from samsara.storage import IndexedStore
from samsara.targets import AnalyticTarget, AnalyticTargetConfig


def small_store():
    """Generations: {}, {a}, {a, b}, {a', b}, {b} with a, b, a' as below."""
    s = IndexedStore(species_names=["pt"], param_names=[["a", "b"]])
    s.record_initial(Society([Population(analytic_species(), np.empty((0, 2)))]), 0.0)
    s.record_event(1, ("birth", 0, [1.0, 0.0]))
    s.record_event(2, ("birth", 0, [2.0, 0.0]))
    s.record_event(3, ("mutation", 0, 0, [3.0, 0.0]))
    s.record_event(4, ("death", 0, 0))
    for g in range(5):
        s.set_waiting_time(g, 1.0)
    return s


def samples(store, gens, tau=None):
    gens = np.asarray(gens)
    return WeightedSamples(store, gens, np.ones(len(gens)) if tau is None else np.asarray(tau, float))


# --- estimators ----------------------------------------------------------------


def test_rb_estimate_examples():
    assert rb_estimate([1.0, 2.0, 3.0], None, [1.0, 1.0, 1.0]) == pytest.approx(2.0)
    assert rb_estimate([0.0, 3.0], None, [2.0, 1.0]) == pytest.approx(1.0)
    assert rb_estimate([5.0] * 4, None, [0.1, 2.0, 3.0, 7.0]) == pytest.approx(5.0)
    with pytest.raises(PostprocessError):
        rb_estimate([], None, [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3)), min_size=1, max_size=20),
       st.floats(1e-3, 1e3), st.floats(-10, 10))
def test_rb_linear_and_tau_scale_invariant(pairs, c, a):
    f = np.array([p[0] for p in pairs])
    tau = np.array([p[1] for p in pairs])
    base = rb_estimate(f, None, tau)
    assert rb_estimate(f, None, c * tau) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert rb_estimate(a * f + 1.0, None, tau) == pytest.approx(a * base + 1.0, rel=1e-9, abs=1e-7)


def test_number_posterior_examples():
    p = number_posterior([1, 1, 2])
    assert p[1] == pytest.approx(2 / 3) and p[2] == pytest.approx(1 / 3)
    assert number_posterior([4]) == {4: 1.0}
    p = number_posterior([0, 1], tau=[3.0, 1.0])
    assert p[0] == pytest.approx(0.75)
    with pytest.raises(PostprocessError):
        number_posterior([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.floats(1e-3, 1e3)), min_size=1, max_size=30))
def test_number_posterior_sums_to_one(pairs):
    p = number_posterior([q[0] for q in pairs], tau=[q[1] for q in pairs])
    assert sum(p.values()) == pytest.approx(1.0, abs=1e-12)
    assert set(p) == {q[0] for q in pairs}


def test_histogram_examples():
    h = weighted_histogram([0.25, 0.75], [1.0, 1.0], bins=2, range=(0.0, 1.0))
    assert h.mass.tolist() == [0.5, 0.5] and not h.empty
    h2 = weighted_histogram([0.25, 0.75], [2.0, 2.0], bins=2, range=(0.0, 1.0))
    assert np.array_equal(h.mass, h2.mass)
    assert weighted_histogram([], [], bins=4).empty


def test_weighted_quantiles():
    q = weighted_quantiles([1.0, 2.0, 3.0], [1.0, 1.0, 2.0], [0.25, 0.5, 0.9])
    assert q[:, 0].tolist() == [1.0, 2.0, 3.0]


# --- store-based ------------------------------------------------------------------


def test_thinning():
    s = small_store()
    assert thinned_generations(s, 0.0, 2).tolist() == [0, 2, 4]
    assert thinned_generations(s, 0.4, 1).tolist() == [2, 3, 4]
    with pytest.raises(PostprocessError):
        thinned_generations(s, 1.0, 1)


def test_parameter_distribution_weights_individuals():
    s = small_store()
    h = parameter_distribution(samples(s, [1, 2]), 0, 0, bins=2, range=(0.5, 2.5))
    # sample 1 holds {1}, sample 2 holds {1, 2}: value 1 carries two thirds of the mass
    assert h.mass == pytest.approx([2 / 3, 1 / 3])
    assert parameter_distribution(samples(s, [0]), 0, 0, bins=3).empty


def test_signal_band_single_sample_and_empty():
    s = small_store()
    template = lambda t, theta: theta[0] * np.ones_like(t)
    times = np.linspace(0.0, 1.0, 5)
    band = signal_band(samples(s, [2]), 0, times, template=template)
    assert np.allclose(band, 3.0)
    assert np.all(signal_band(samples(s, [0]), 0, times, template=template) == 0.0)


def test_mixture_density_band_integrates_weights():
    s = IndexedStore(species_names=["mix"], param_names=[["w", "mu", "var"]])
    s.record_initial(Society([Population(analytic_species(), np.empty((0, 2)))]), 0.0)
    s.record_event(1, ("birth", 0, [0.5, 0.0, 1.0]))
    s.record_event(2, ("birth", 0, [0.5, 3.0, 0.5]))
    s.set_waiting_time(0, 1.0), s.set_waiting_time(1, 1.0), s.set_waiting_time(2, 1.0)
    grid = np.linspace(-10, 12, 4001)
    band = mixture_density_band(samples(s, [2]), 0, grid)
    assert np.trapezoid(band[1], grid) == pytest.approx(1.0, abs=1e-6)


def test_export_for_catalog_labels():
    s = small_store()
    cats = export_for_catalog(samples(s, [1, 2, 4]), 0)
    assert len(cats) <= 2
    assert [len(c) for c in cats] == [2, 2]
    # the mutated row takes the label its parent freed; b keeps its label throughout
    cats = export_for_catalog(samples(s, [2, 3, 4]), 0)
    assert [len(c) for c in cats] == [2, 3]
    assert [v[0] for _, v in cats[0]] == [1.0, 3.0]


def test_summary_and_files(tmp_path):
    store = run(ChainConfig(n_gen=2000, seed=0), AnalyticTarget(AnalyticTargetConfig()), [analytic_species()])
    out = summarize(store, burn_in=0.1, stride=1)
    (summary,) = out["species"].values()
    assert sum(summary["number_pmf"].values()) == pytest.approx(1.0)
    assert out["n_samples"] == 2001 - 200
    write_number_pmf_csv(tmp_path / "n.csv", {0: 0.25, 2: 0.75})
    rows = list(csv.reader(open(tmp_path / "n.csv")))
    assert rows == [["n", "probability"], ["0", "0.25"], ["2", "0.75"]]
    cats = export_for_catalog(samples(small_store(), [1, 2]), 0)
    write_catalog_json(tmp_path / "c.json", cats, ["a", "b"])
    data = json.loads((tmp_path / "c.json").read_text())
    assert data["param_names"] == ["a", "b"] and len(data["catalogs"]) == 2

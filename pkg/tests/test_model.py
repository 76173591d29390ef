import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samsara.model import (
    GMMConjugatePrior,
    ModelError,
    NumberPrior,
    Population,
    Society,
    SpeciesSpec,
    UniformBoxPrior,
    clone_with_birth,
    clone_with_death,
    clone_with_mutation,
    log_prior,
    make_society,
)

BOX = [(-5.0, 4.0), (-8.0, 4.0)]


def box_spec(bounds=BOX, number_prior=None):
    return SpeciesSpec("pt", [f"x{i}" for i in range(len(bounds))], UniformBoxPrior(bounds),
                       number_prior or NumberPrior())


def gmm_spec():
    prior = GMMConjugatePrior.from_data(np.array([0.0, 1.0, 2.0, 3.0]))
    return SpeciesSpec("mix", ["weight", "mean", "var"], prior, z_factor_kind="gmm")


def society(spec, values):
    return Society([Population(spec, values)])


def test_make_society_empty():
    soc = make_society([box_spec()], [0], np.random.default_rng(0))
    assert len(soc) == 1 and len(soc[0]) == 0


def test_make_society_unit_box_containment():
    spec = box_spec([(0.0, 1.0), (0.0, 1.0)])
    soc = make_society([spec], [2], np.random.default_rng(1))
    assert soc[0].values.shape == (2, 2)
    assert np.all((soc[0].values >= 0) & (soc[0].values <= 1))


def test_make_society_gmm_single_weight():
    soc = make_society([gmm_spec()], [1], np.random.default_rng(2))
    w = soc[0].values[0, 0]
    assert 0.0 < w <= 1.0
    assert log_prior(soc) > -math.inf


def test_make_society_errors():
    with pytest.raises(ModelError):
        make_society([box_spec()], [0, 1], np.random.default_rng(0))
    improper = SpeciesSpec("u", ["x"], UniformBoxPrior([None]))
    with pytest.raises(ModelError):
        make_society([improper], [1], np.random.default_rng(0))


def test_log_prior_uniform_box_value():
    soc = society(box_spec(), [[0.0, 0.0]])
    assert log_prior(soc) == pytest.approx(-math.log(9 * 12), abs=1e-12)


def test_log_prior_outside_support():
    assert log_prior(society(box_spec(), [[4.5, 0.0]])) == -math.inf


def test_log_prior_boundary_in_support():
    assert log_prior(society(box_spec(), [[4.0, -8.0]])) > -math.inf


def test_improper_number_prior_flat():
    spec = box_spec()
    rng = np.random.default_rng(3)
    a = log_prior(society(spec, spec.prior.sample(rng, 3)))
    b = log_prior(society(spec, spec.prior.sample(rng, 7)))
    assert a - b == pytest.approx(4 * math.log(9 * 12), abs=1e-9)


def test_number_prior_kinds():
    assert NumberPrior().logpmf(12) == 0.0
    assert NumberPrior("poisson", mean=5.0).logpmf(5) == pytest.approx(5 * math.log(5) - 5 - math.lgamma(6))
    p = NumberPrior("pmf", pmf=(0.5, 0.5))
    assert p.logpmf(1) == pytest.approx(math.log(0.5)) and p.logpmf(2) == -math.inf
    with pytest.raises(ModelError):
        NumberPrior("poisson")
    with pytest.raises(ModelError):
        NumberPrior("pmf", pmf=(0.2, 0.2))


def test_species_spec_invariants():
    with pytest.raises(ModelError):
        SpeciesSpec("bad", ["a", "b"], UniformBoxPrior([(0.0, 1.0)]))
    with pytest.raises(ModelError):
        UniformBoxPrior([(1.0, 0.0)])


def test_clone_operations():
    spec = box_spec()
    empty = society(spec, np.empty((0, 2)))
    one = clone_with_birth(empty, 0, [0.5, 0.5])
    assert len(one[0]) == 1 and len(empty[0]) == 0
    assert len(clone_with_death(one, 0, 0)[0]) == 0
    moved = clone_with_mutation(one, 0, 0, [1.0, 1.0])
    assert moved.counts == one.counts
    assert np.array_equal(one[0].values, [[0.5, 0.5]])
    with pytest.raises((ModelError, IndexError)):
        clone_with_death(empty, 0, 0)


def test_clones_never_alias():
    spec = box_spec()
    src = society(spec, [[0.0, 0.0], [1.0, 1.0]])
    before = src[0].values.copy()
    out = clone_with_mutation(src, 0, 1, [2.0, 2.0])
    with pytest.raises(ValueError):
        out[0].values[0, 0] = 9.0  # populations are frozen values
    assert np.array_equal(src[0].values, before)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 6), st.integers(0, 10_000))
def test_log_prior_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    spec = gmm_spec()
    vals = spec.prior.sample(rng, n)
    perm = rng.permutation(n)
    assert log_prior(society(spec, vals)) == pytest.approx(log_prior(society(spec, vals[perm])), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.integers(0, 10_000))
def test_make_society_finite_prior(n, seed):
    for spec in (box_spec(), gmm_spec()):
        soc = make_society([spec], [n], np.random.default_rng(seed))
        assert log_prior(soc) > -math.inf


def test_gmm_removal_log_densities_match_direct():
    spec = gmm_spec()
    vals = spec.prior.sample(np.random.default_rng(5), 5)
    fast = spec.prior.removal_log_densities(vals)
    for j in range(5):
        rest = np.delete(vals, j, axis=0)
        rest[:, 0] /= rest[:, 0].sum()
        assert fast[j] == pytest.approx(spec.prior.log_density_population(rest), abs=1e-9)

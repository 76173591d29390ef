import math

import numpy as np
import pytest
from scipy import stats

from samsara.model import GMMConjugatePrior, ModelError, Population, SpeciesSpec, UniformBoxPrior
from samsara.proposals import (
    GaussianMutation,
    MitosisMutation,
    NIWBetaBirth,
    PriorBirth,
    ProposalConfig,
    build_proposals,
)

UNIT = UniformBoxPrior([(0.0, 1.0), (0.0, 1.0)])
BOX = UniformBoxPrior([(-5.0, 4.0), (-8.0, 4.0)])
GMM = GMMConjugatePrior(0.0, 0.2, 1.0, 3.0)


def pop(prior, values, names=("a", "b")):
    return Population(SpeciesSpec("s", list(names), prior), values)


def gmm_pop(n, rng):
    return Population(SpeciesSpec("mix", ["weight", "mean", "var"], GMM, z_factor_kind="gmm"), GMM.sample(rng, n))


def test_prior_birth_unit_box():
    b = PriorBirth(UNIT)
    rng = np.random.default_rng(0)
    for _ in range(5):
        theta, lh = b.propose(pop(UNIT, np.empty((0, 2))), rng)
        assert lh == pytest.approx(0.0)
        assert np.all((theta >= 0) & (theta <= 1))
    assert b.log_density(pop(UNIT, np.empty((0, 2))), [0.5, 0.5]) == pytest.approx(0.0)
    assert b.log_density(pop(UNIT, np.empty((0, 2))), [1.5, 0.5]) == -math.inf


def test_prior_birth_analytic_box():
    theta, lh = PriorBirth(BOX).propose(pop(BOX, np.empty((0, 2))), np.random.default_rng(1))
    assert lh == pytest.approx(-math.log(108))
    rows = PriorBirth(BOX).rows(0, np.array([[0.0, 0.0], [9.0, 0.0]]))
    assert rows[0] == pytest.approx(-math.log(108)) and rows[1] == -math.inf


def test_niw_beta_weight_density():
    b = NIWBetaBirth(GMM)
    theta = np.array([0.0, 0.0, 1.0])
    nig = float(GMM.log_nig(0.0, 1.0))
    assert b.log_density_n(3, theta) - nig == pytest.approx(math.log(3.0))
    theta = np.array([0.25, 0.4, 0.8])
    want = stats.beta(1, 3).logpdf(0.25) + stats.invgamma(1.5, scale=0.5).logpdf(0.8) + stats.norm(0, math.sqrt(0.8 / 0.2)).logpdf(0.4)
    assert b.log_density_n(3, theta) == pytest.approx(want, abs=1e-12)
    assert b.rows(3, theta[None, :])[0] == pytest.approx(want, abs=1e-12)


def test_niw_beta_only_for_mixtures():
    with pytest.raises(ModelError):
        NIWBetaBirth(UNIT)
    with pytest.raises(ModelError):
        PriorBirth(GMM)


def test_niw_beta_normalizes():
    # E_h[g / h] = 1 for a uniform density g on a box where h > 0
    rng = np.random.default_rng(2)
    b = NIWBetaBirth(GMM)
    lo, hi = np.array([0.0, -2.0, 0.1]), np.array([1.0, 2.0, 2.0])
    p = gmm_pop(2, rng)
    draws = np.array([b.propose(p, rng)[0] for _ in range(40_000)])
    inside = np.all((draws >= lo) & (draws <= hi), axis=1)
    ratio = np.where(inside, 1.0 / np.prod(hi - lo), 0.0) / np.exp(b.rows(2, draws))
    assert ratio.mean() == pytest.approx(1.0, rel=0.05)


def test_prior_birth_normalizes_2d():
    rng = np.random.default_rng(3)
    x = rng.uniform([-6.0, -9.0], [5.0, 5.0], size=(100_000, 2))
    est = 11 * 14 * np.mean(np.exp(PriorBirth(BOX).rows(0, x)))
    assert est == pytest.approx(1.0, rel=0.02)


def test_gaussian_symmetric_and_moments():
    g = GaussianMutation([0.5, 0.1])
    rng = np.random.default_rng(4)
    draws = []
    for _ in range(10_000):
        new, f, r = g.propose(np.array([1.0, -2.0]), None, rng)
        assert f == r
        draws.append(new)
    draws = np.array(draws)
    assert np.allclose(draws.mean(axis=0), [1.0, -2.0], atol=0.02)
    assert np.allclose(draws.std(axis=0), [0.5, 0.1], rtol=0.05)


def test_mitosis_keep_all_and_zero_strength():
    rng = np.random.default_rng(5)
    theta = np.array([1.0, -2.0, 3.0])
    new, f, r = MitosisMutation([0.3, 0.3, 0.3], keep_prob=1.0).propose(theta, None, rng)
    assert np.array_equal(new, theta)
    new, f, r = MitosisMutation([0.0, 0.0, 0.0], keep_prob=0.3).propose(theta, None, rng)
    assert np.array_equal(new, theta)


def test_mitosis_densities():
    m = MitosisMutation([0.1, 0.2], keep_prob=0.0)
    theta = np.array([2.0, -1.0])
    new, f, r = m.propose(theta, None, np.random.default_rng(6))
    want_f = stats.norm(2.0, 0.2).logpdf(new[0]) + stats.norm(-1.0, 0.2).logpdf(new[1])
    want_r = stats.norm(new[0], 0.1 * abs(new[0])).logpdf(2.0) + stats.norm(new[1], 0.2 * abs(new[1])).logpdf(-1.0)
    assert f == pytest.approx(want_f) and r == pytest.approx(want_r)


def test_prior_mutation_densities():
    p = build_proposals(BOX, ProposalConfig("prior", "prior"))
    new, f, r = p.propose_mutation([0.0, 0.0], None, np.random.default_rng(7))
    assert f == pytest.approx(-math.log(108)) and r == pytest.approx(-math.log(108))


def test_config_validation():
    with pytest.raises(ModelError):
        ProposalConfig("prior", "gaussian", sigma=(0.1, -1.0))
    with pytest.raises(ModelError):
        ProposalConfig("prior", "mitosis", xi_strength=(0.1,), keep_prob=1.5)
    with pytest.raises(ModelError):
        ProposalConfig("sideways", "gaussian", sigma=(1.0,))
    with pytest.raises(ModelError):
        build_proposals(BOX, ProposalConfig("prior", "gaussian", sigma=(1.0,)), n_par=2)


# --- signal-to-noise scaled kernel ------------------------------------------------


def _fisher_kernel(n_t=2000, dt=500.0, c=1e-45, scales=(10.0, 1.0, 0.1)):
    from samsara.targets import Dataset, sine_template

    box = UniformBoxPrior([(-54.0, -52.0), (math.log(3e-5), math.log(3e-4)), (-28.0, -25.0), (0.0, 2 * math.pi)])
    data = Dataset.timeseries(np.arange(n_t) * dt, np.zeros(n_t), c)
    return build_proposals(box, ProposalConfig("prior", "fisher", scales=scales), 4, sine_template, data).mutation


def test_fisher_widths_follow_snr():
    m = _fisher_kernel()
    theta = np.array([-52.5, -9.0, -26.0, 1.0])
    snr = math.exp(theta[0]) * math.sqrt(1000 / 1e-45)
    sd = m.widths(theta)
    assert sd[0] == pytest.approx(1 / snr, rel=0.03) and sd[3] == pytest.approx(1 / snr, rel=0.03)
    # weaker sources move further
    weak = m.widths(theta - [2.0, 0, 0, 0])
    assert np.all(weak[:1] > sd[:1])
    # widths never exceed the prior range
    assert np.all(m.widths(theta - [30.0, 0, 0, 0]) <= m.max_sigma)


def test_fisher_kernel_densities():
    m = _fisher_kernel()
    theta = np.array([-52.5, -9.0, -26.0, 1.0])
    new, f, r = m.propose(theta, None, np.random.default_rng(8))
    def mix(to, frm):
        sd = m.widths(frm)
        return np.log(np.mean([np.prod(stats.norm.pdf(to, frm, s * sd)) for s in m.scales]))
    assert f == pytest.approx(mix(new, theta), rel=1e-9)
    assert r == pytest.approx(mix(theta, new), rel=1e-9)


def test_fisher_needs_timeseries():
    with pytest.raises(ModelError):
        build_proposals(BOX, ProposalConfig("prior", "fisher"), 2)

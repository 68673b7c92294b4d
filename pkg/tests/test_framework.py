import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdldp import framework as fw
from hdldp.errors import ConfigError
from hdldp.framework import DeviationModel, ValueDistribution
from hdldp.mechanisms import MechanismSpec

VALUES = [k / 10 for k in range(1, 11)]


def case_study(kind):
    spec = MechanismSpec.from_budget(kind, 0.1, 100)
    return spec, fw.deviation_model(spec, ValueDistribution.repeated(VALUES, [0.1] * 10, 1), 1e4)


def test_value_distribution_validation():
    with pytest.raises(ConfigError):
        ValueDistribution([[0.0, 1.0]], [[0.5, 0.6]])
    with pytest.raises(ConfigError):
        ValueDistribution([[0.0]], [[-1.0]])
    with pytest.raises(ConfigError):
        ValueDistribution([], [])


def test_value_distribution_dict_forms():
    vd = ValueDistribution.from_dict({"values": [0.1, 0.2], "probs": [0.5, 0.5], "d": 3})
    assert vd.d == 3
    again = ValueDistribution.from_dict(vd.to_dict())
    assert again.d == 3 and np.array_equal(again.values[2], [0.1, 0.2])


def test_discretize_constant_and_uniform():
    single = fw.discretize([0.3] * 10, 5)
    assert single.values[0].tolist() == [0.3] and single.probs[0].tolist() == [1.0]
    x = np.random.default_rng(0).uniform(-1, 1, 100_000)
    vd = fw.discretize(x, 10)
    assert np.all(np.abs(vd.probs[0] - 0.1) <= 0.01)
    assert math.fsum(vd.probs[0]) == pytest.approx(1.0, abs=1e-15)


def test_from_columns_exact_and_binned():
    data = np.array([[0.0, 1.0], [0.0, -1.0], [0.5, 1.0], [0.5, 1.0]])
    exact = ValueDistribution.from_columns(data)
    assert exact.values[1].tolist() == [-1.0, 1.0] and exact.probs[1].tolist() == [0.25, 0.75]
    assert ValueDistribution.from_columns(data, bins=2).d == 2


def test_piecewise_case_study():
    _, model = case_study("piecewise")
    assert model.sigma2[0] == pytest.approx(533.210, abs=0.5)
    assert model.delta[0] == 0.0


def test_squarewave_case_study():
    _, model = case_study("squarewave")
    assert model.delta[0] == pytest.approx(-0.049, abs=0.001)
    assert model.sigma2[0] == pytest.approx(3.365e-5, rel=0.05)


def test_laplace_model():
    spec = MechanismSpec.from_budget("laplace", 0.8, 4)
    model = fw.deviation_model(spec, r=[100, 200, 400])
    assert np.all(model.delta == 0)
    assert np.allclose(model.sigma2, 2 * (2 * 4 / 0.8) ** 2 / np.array([100, 200, 400]), rtol=1e-15)


@pytest.mark.parametrize("kind", ["laplace", "piecewise", "squarewave"])
def test_doubling_r_halves_variance(kind):
    spec = MechanismSpec(kind, 0.5)
    vd = ValueDistribution.repeated([0.2, 0.6], [0.3, 0.7], 2)
    a = fw.deviation_model(spec, vd, 300.0)
    b = fw.deviation_model(spec, vd, 600.0)
    assert np.allclose(b.sigma2 * 2, a.sigma2, rtol=1e-15)


def test_bounded_requires_value_distribution():
    with pytest.raises(ConfigError):
        fw.deviation_model(MechanismSpec("piecewise", 1.0), None, 10)


def test_model_validation():
    with pytest.raises(ConfigError):
        DeviationModel([0.0], [0.0], [1.0])
    with pytest.raises(ConfigError):
        DeviationModel([0.0], [1.0], [0.0])
    with pytest.raises(ConfigError):
        fw.deviation_model(MechanismSpec("laplace", 1.0), r=[1.0, -1.0])


def test_pdf_peak_and_factorization():
    std = DeviationModel([0.0], [1.0], [1.0])
    assert fw.deviation_pdf(std, np.array([0.0])) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    rng = np.random.default_rng(1)
    for _ in range(20):
        model = DeviationModel(rng.normal(size=5), rng.uniform(0.1, 2, 5), 1.0)
        x = rng.normal(size=5)
        one = [fw.deviation_pdf(DeviationModel([model.delta[j]], [model.sigma2[j]], 1.0), x[j : j + 1]) for j in range(5)]
        assert fw.deviation_pdf(model, x) == pytest.approx(np.prod(one), rel=1e-12)


def test_piecewise_pdf_peak():
    _, model = case_study("piecewise")
    peak = fw.deviation_pdf(model, np.array([0.0]))
    assert 1 / peak == pytest.approx(57.900, abs=0.05)


def test_high_dimensional_log_density_is_finite():
    model = DeviationModel(np.zeros(5000), np.full(5000, 4.0), 1.0)
    assert math.isfinite(fw.deviation_logpdf(model, np.zeros(5000)))
    assert fw.supremum_probability(model, 50.0) == pytest.approx(1.0)
    assert 0.0 <= fw.supremum_probability(model, 0.1) < 1e-300


def test_supremum_limits():
    model = DeviationModel([0.1, -0.2], [0.01, 0.04], 1.0)
    assert fw.supremum_probability(model, 1e6) == 1.0
    assert fw.supremum_probability(model, 1e-12) < 1e-9
    with pytest.raises(ConfigError):
        fw.supremum_probability(model, 0.0)


def test_supremum_matches_phi_formula():
    model = DeviationModel([0.3], [0.25], 1.0)
    xi = 0.4
    phi = lambda z: 0.5 * math.erfc(-z / math.sqrt(2))
    assert fw.supremum_probability(model, xi) == pytest.approx(phi((xi - 0.3) / 0.5) - phi((-xi - 0.3) / 0.5), rel=1e-14)


def test_far_tail_interval_keeps_precision():
    # Interval entirely 40 sigma right of the mean: naive CDF differences give 0.
    model = DeviationModel([-4.0], [0.01], 1.0)
    assert fw.supremum_probability(model, 0.1) == 0.0
    model = DeviationModel([0.0], [1.0], 1.0)
    logm = fw.log_box_mass(model, 1.0)
    assert logm[0] == pytest.approx(math.log(math.erf(1 / math.sqrt(2))), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(
    delta=st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    sigma=st.lists(st.floats(0.01, 2), min_size=3, max_size=3),
    xi=st.lists(st.floats(0.01, 3), min_size=3, max_size=3),
    bump=st.floats(0.0, 1.0),
    j=st.integers(0, 2),
)
def test_supremum_monotone_and_permutation_invariant(delta, sigma, xi, bump, j):
    model = DeviationModel(delta, np.square(sigma), 1.0)
    p = fw.supremum_probability(model, xi)
    wider = list(xi)
    wider[j] += bump
    assert fw.supremum_probability(model, wider) >= p
    perm = [2, 0, 1]
    permuted = DeviationModel(np.array(delta)[perm], np.square(sigma)[perm], 1.0)
    assert fw.supremum_probability(permuted, np.array(xi)[perm]) == pytest.approx(p, rel=1e-12)


def test_berry_esseen_laplace():
    spec = MechanismSpec("laplace", 1.0)
    b1 = fw.berry_esseen_bound(spec, r=1000.0, d=1)[0]
    assert b1 == pytest.approx(0.0157, abs=0.0005)
    assert fw.berry_esseen_bound(spec, r=4000.0, d=1)[0] / b1 == pytest.approx(0.5, abs=1e-9)
    exact = fw.berry_esseen_bound(spec, r=1000.0, d=1, exact_rho=True)[0]
    assert exact > b1


def test_berry_esseen_bounded_scales():
    spec = MechanismSpec("piecewise", 0.5)
    vd = ValueDistribution.repeated([0.0, 0.5], [0.5, 0.5], 1)
    a = fw.berry_esseen_bound(spec, vd, 100.0)[0]
    b = fw.berry_esseen_bound(spec, vd, 400.0)[0]
    assert b / a == pytest.approx(0.5, rel=1e-12)


def test_berry_esseen_default_rho_for_laplace():
    # Default uses rho = 3 lam^3 (24 at lam = 2); exact_rho uses 6 lam^3.
    spec = MechanismSpec("laplace", 1.0)
    s3 = 8.0**1.5
    for rho, exact in ((24.0, False), (48.0, True)):
        got = fw.berry_esseen_bound(spec, r=1.0, d=1, exact_rho=exact)[0]
        assert got == pytest.approx(fw.BE_C0 * (rho + fw.BE_C1 * s3) / s3, rel=1e-14)

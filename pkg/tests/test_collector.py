import math

import numpy as np
import pytest

from hdldp import collector
from hdldp.collector import AggregateState, Report
from hdldp.errors import ConfigError, DomainError, ParseError
from hdldp.framework import ValueDistribution
from hdldp.mechanisms import MechanismSpec

IDENTITY = lambda x, rng: np.asarray(x, dtype=float)  # noqa: E731


def test_sample_dimensions_full_set():
    assert collector.sample_dimensions(5, 5, np.random.default_rng(0)).tolist() == [0, 1, 2, 3, 4]


@pytest.mark.parametrize("m", [0, 6, -1])
def test_sample_dimensions_rejects_bad_m(m):
    with pytest.raises(ConfigError):
        collector.sample_dimensions(5, m, np.random.default_rng(0))


def test_dimension_marginals_are_uniform():
    dims = collector.sample_dimension_matrix(1_000_000, 100, 1, np.random.default_rng(1))
    freq = np.bincount(dims.ravel(), minlength=100) / dims.size
    assert np.all(np.abs(freq - 0.01) <= 0.0005)


def test_sample_dimension_matrix_rows_are_distinct_sorted():
    dims = collector.sample_dimension_matrix(1000, 12, 5, np.random.default_rng(2))
    assert dims.shape == (1000, 5)
    assert np.all(np.diff(dims, axis=1) > 0)


def test_expected_report_count():
    n, d, m = 20_000, 50, 10
    dims = collector.sample_dimension_matrix(n, d, m, np.random.default_rng(3))
    counts = np.bincount(dims.ravel(), minlength=d)
    assert counts.sum() == n * m
    expected = n * m / d
    sd = math.sqrt(n * (m / d) * (1 - m / d))
    assert np.all(np.abs(counts - expected) <= 5 * sd)


def test_perturb_record_reports():
    spec = MechanismSpec.from_budget("piecewise", 1.0, 3)
    reports = collector.perturb_record(np.linspace(-1, 1, 8), spec, 3, np.random.default_rng(4))
    assert len(reports) == 3 and len({r.dim_index for r in reports}) == 3
    assert all(abs(r.value) <= spec.bound for r in reports)
    again = collector.perturb_record(np.linspace(-1, 1, 8), spec, 3, np.random.default_rng(4))
    assert reports == again
    with pytest.raises(ConfigError):
        collector.perturb_record(np.zeros(4), spec, 0, np.random.default_rng(4))


def test_squarewave_reports_within_signed_bound():
    spec = MechanismSpec.from_budget("squarewave", 2.0, 2)
    dims, values = collector.perturb_dataset(np.random.default_rng(5).uniform(-1, 1, (2000, 4)), spec, 2, np.random.default_rng(6))
    assert np.all(np.abs(values) <= spec.bound)


def test_aggregate_simple():
    agg = collector.aggregate([Report(0, 1.0), Report(0, -1.0)], 2)
    assert agg.theta_hat[0] == 0.0 and agg.counts.tolist() == [2, 0]
    assert agg.missing.tolist() == [False, True]
    assert agg.to_dict()["missing"] == [1]


def test_aggregate_order_invariance_bitwise():
    rng = np.random.default_rng(7)
    dims = rng.integers(0, 5, 5000)
    values = rng.standard_normal(5000) * 1e6
    values[::7] = 1e-9
    a = AggregateState(5).add(dims, values).estimate().theta_hat
    perm = rng.permutation(5000)
    b = AggregateState(5).add(dims[perm], values[perm]).estimate().theta_hat
    assert np.array_equal(a, b)


def test_merge_matches_single_pass():
    rng = np.random.default_rng(8)
    dims = rng.integers(0, 6, 3000)
    values = rng.standard_normal(3000)
    whole = AggregateState(6).add(dims, values).estimate().theta_hat
    parts = [AggregateState(6).add(dims[i::3], values[i::3]) for i in range(3)]
    left = parts[0].merge(parts[1]).merge(parts[2]).estimate().theta_hat
    right = parts[2].merge(parts[0].merge(parts[1])).estimate().theta_hat
    assert np.allclose(left, whole, rtol=1e-12, atol=0)
    assert np.allclose(right, whole, rtol=1e-12, atol=0)


def test_aggregate_rejects_bad_indices():
    with pytest.raises(DomainError):
        AggregateState(3).add([3], [0.0])
    with pytest.raises(DomainError):
        AggregateState(3).add([0.5], [0.0])


def test_identity_pipeline_recovers_exact_means():
    data = np.random.default_rng(9).uniform(-1, 1, (500, 6))
    agg = collector.collect(data, MechanismSpec("laplace", 1.0), 6, np.random.default_rng(0), perturber=IDENTITY).estimate()
    truth = np.array([math.fsum(c) / 500 for c in data.T])
    assert np.array_equal(agg.theta_hat, truth)


def test_counts_sum_to_nm():
    data = np.zeros((300, 10))
    state = collector.collect(data, MechanismSpec("laplace", 1.0), 4, np.random.default_rng(1))
    assert state.counts.sum() == 300 * 4


def test_laplace_pipeline_within_model_band():
    n, d, m, eps = 100_000, 10, 10, 1.0
    data = np.random.default_rng(10).uniform(-1, 1, (n, d))
    spec = MechanismSpec.from_budget("laplace", eps, m)
    agg = collector.collect(data, spec, m, np.random.default_rng(11)).estimate()
    truth = data.mean(axis=0)
    band = 4 * np.sqrt(2 * (2 * m / eps) ** 2 / agg.counts)
    assert np.all(np.abs(agg.theta_hat - truth) <= band)


def test_collect_dimension_exact_with_stub():
    col = np.linspace(-1, 1, 101)
    mean, r = collector.collect_dimension(col, MechanismSpec("laplace", 1.0), 5, 5, np.random.default_rng(0), IDENTITY)
    assert r == 101 and mean == pytest.approx(0.0, abs=1e-15)
    _, r = collector.collect_dimension(col, MechanismSpec("laplace", 1.0), 1, 5, np.random.default_rng(0))
    assert 0 < r < 101


def test_calibrate_unbiased_mechanisms_identity():
    theta = np.array([0.1, -0.2])
    assert np.array_equal(collector.calibrate(theta, MechanismSpec("laplace", 1.0)), theta)
    assert np.array_equal(collector.calibrate(theta, MechanismSpec("piecewise", 1.0)), theta)


def test_calibrate_squarewave_case_study_prior():
    spec = MechanismSpec.from_budget("squarewave", 0.1, 100)
    prior = ValueDistribution.repeated([k / 10 for k in range(1, 11)], [0.1] * 10, 1)
    out = collector.calibrate(np.array([0.5]), spec, prior, signed=False)
    assert out[0] - 0.5 == pytest.approx(0.049975, abs=1e-6)


def test_calibrate_bounded_requires_prior_when_asked():
    spec = MechanismSpec("squarewave", 1.0)
    assert np.array_equal(collector.calibrate([0.3], spec), [0.3])
    with pytest.raises(ConfigError):
        collector.calibrate([0.3], spec, required=True)


def test_report_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    dims, values = rng.integers(0, 4, 50), rng.standard_normal(50)
    path = tmp_path / "reports.csv"
    collector.write_reports(path, dims, values)
    d2, v2 = collector.read_reports(path)
    assert np.array_equal(d2, dims) and np.array_equal(v2, values)


def test_report_csv_header_checked(tmp_path):
    path = tmp_path / "reports.csv"
    path.write_text("dim,value\n0,1.0\n")
    with pytest.raises(ParseError):
        collector.read_reports(path)
    path.write_text("dim_index,value\n0.5,1.0\n")
    with pytest.raises(ParseError) as err:
        collector.read_reports(path)
    assert err.value.row == 2

import numpy as np
import pandas as pd
import pytest

from qsdtools.errors import ConfigError, NumericalError
from qsdtools.estimate import (BiasReport, BiasRow, bias_experiment, decay_fit, mean_measure,
                               reference_qsd)
from qsdtools.measures import EmpiricalMeasure, tv_distance
from qsdtools.model import named_model


def _random_measure(gen):
    support = gen.choice(np.arange(1, 40), size=gen.integers(1, 12), replace=False)
    return EmpiricalMeasure(pd.Series(gen.random(len(support)) + 1e-3, index=support))


def test_measure_normalizes_and_rejects_bad_weights():
    mu = EmpiricalMeasure({1: 2.0, 4: 2.0})
    assert mu[1] == 0.5 and mu[2] == 0.0
    assert mu.total == pytest.approx(1.0)
    with pytest.raises(ValueError, match="negative"):
        EmpiricalMeasure({1: 1.0, 2: -0.5})
    with pytest.raises(ValueError, match="N\\*"):
        EmpiricalMeasure({0: 1.0})
    with pytest.raises(ValueError, match="no mass"):
        EmpiricalMeasure({})


def test_measure_helpers():
    mu = EmpiricalMeasure.from_positions([1, 1, 2, 5])
    assert mu[1] == 0.5
    assert mu.mass([1, 2]) == pytest.approx(0.75)
    assert mu.tail_mass(2) == pytest.approx(0.25)
    assert mu.phi_moment(lambda i: i.astype(float)) == pytest.approx(2.25)
    assert mu.to_array(5).tolist() == [0.5, 0.25, 0.0, 0.0, 0.25]
    assert EmpiricalMeasure.from_counts({3: 1, 4: 3})[4] == 0.75
    assert list(mu.to_frame().columns) == ["state", "weight"]


def test_tv_trivial_cases():
    mu = EmpiricalMeasure({1: 0.3, 2: 0.7})
    assert tv_distance(mu, mu) == 0.0
    assert tv_distance(EmpiricalMeasure.point(1), EmpiricalMeasure.point(2)) == 1.0


def test_tv_of_truncated_geometric():
    j = np.arange(1, 81)
    exact = EmpiricalMeasure.from_array(2.0 ** -j)
    truncated = EmpiricalMeasure.from_array(2.0 ** -j[:20])
    assert tv_distance(truncated, exact) == pytest.approx(2.0 ** -20, rel=1e-6)


def test_tv_is_a_metric():
    gen = np.random.default_rng(0)
    for _ in range(1000):
        mu, nu, eta = (_random_measure(gen) for _ in range(3))
        d = tv_distance(mu, nu)
        assert 0.0 <= d <= 1.0
        assert d == pytest.approx(tv_distance(nu, mu), abs=1e-15)
        assert d <= tv_distance(mu, eta) + tv_distance(eta, nu) + 1e-12
        assert tv_distance(mu, mu) == 0.0


def test_mean_measure():
    mu = EmpiricalMeasure({2: 1.0, 3: 1.0})
    assert tv_distance(mean_measure([mu]), mu) == pytest.approx(0.0, abs=1e-15)
    half = mean_measure([EmpiricalMeasure.point(1), EmpiricalMeasure.point(3)])
    assert half[1] == 0.5 and half[3] == 0.5
    with pytest.raises(ValueError):
        mean_measure([])


def test_mean_is_no_farther_than_the_average_sample():
    gen = np.random.default_rng(1)
    for _ in range(200):
        samples = [_random_measure(gen) for _ in range(5)]
        ref = _random_measure(gen)
        avg = np.mean([tv_distance(s, ref) for s in samples])
        assert tv_distance(mean_measure(samples), ref) <= avg + 1e-12


def test_decay_fit_exact_power_law():
    fit = decay_fit([(N, 0.4 / N) for N in (2, 10, 100, 1000)])
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(0.4), abs=1e-12)
    slope, intercept = fit
    assert slope == fit.slope


def test_decay_fit_on_known_linear_rows():
    rows = [(2, 0.190), (10, 4.5e-2), (100, 5.0e-3), (1000, 5.1e-4)]
    assert decay_fit(rows).slope == pytest.approx(-1.0, abs=0.2)


def test_decay_fit_two_rows():
    fit = decay_fit([(10, 1e-2), (100, 1e-4)])
    assert fit.slope == pytest.approx(-2.0)
    assert fit.slope_se == 0.0


def test_decay_fit_degenerate():
    with pytest.raises(NumericalError, match="same N"):
        decay_fit([(10, 0.1), (10, 0.2)])
    with pytest.raises(NumericalError):
        decay_fit([(10, 0.1)])


def test_decay_fit_reads_a_report():
    report = BiasReport(model="m", reference="closed-form", theory_supported=True, seed=0, rows=[
        BiasRow(N=N, tv=1.0 / N, se=0.0, replicas=1, t_max=1.0, t_burn=0.0,
                estimator="time-average", reference="closed-form") for N in (2, 4, 8)])
    assert decay_fit(report).slope == pytest.approx(-1.0)


def test_reference_kinds(linear, logistic):
    closed = reference_qsd(linear, "closed-form")
    np.testing.assert_allclose(closed.weights[:30], 2.0 ** -np.arange(1, 31), rtol=1e-12)
    eig = reference_qsd(linear, "eigenvector", M=300)
    assert tv_distance(closed.to_measure(), eig.to_measure()) < 1e-8
    assert reference_qsd(logistic, "eigenvector", M=100).weights.sum() == pytest.approx(1.0)
    with pytest.raises(ConfigError, match="no closed-form"):
        reference_qsd(logistic, "closed-form")
    with pytest.raises(ConfigError, match="unknown reference"):
        reference_qsd(linear, "histogram")


def test_large_n_reference_is_an_occupation_measure(linear, caplog):
    ref = reference_qsd(linear, "large-N", N0=50, t_max=10.0, seed=2)
    assert ref.meta["reference"] == "large-N"
    assert ref.weights.sum() == pytest.approx(1.0)
    assert ref.meta["tv_se"] is None
    assert "no error bar" in caplog.text


def test_large_n_reference_carries_an_error_bar(linear):
    ref = reference_qsd(linear, "large-N", N0=50, t_max=20.0, seed=2, jobs=1, N0_replicas=4)
    assert ref.meta["N0_replicas"] == 4
    assert 0.0 < ref.meta["tv_se"] < 0.2
    assert ref.weights.sum() == pytest.approx(1.0)
    report = bias_experiment(linear, [2], 10.0, 2.0, 3, ref, seed=1, jobs=1,
                             reference_kind="large-N", bootstrap=20)
    row = report.rows[0]
    assert row.reference_se == ref.meta["tv_se"]
    assert row.se >= row.reference_se
    with pytest.raises(ConfigError, match="N0_replicas"):
        reference_qsd(linear, "large-N", N0=10, t_max=1.0, N0_replicas=0)


def test_tv_norm_is_the_full_l1_norm():
    row = BiasRow(N=2, tv=0.0952, se=0.01, replicas=1, t_max=1.0, t_burn=0.0,
                  estimator="time-average", reference="closed-form")
    assert row.tv_norm == pytest.approx(0.1904)
    report = BiasReport(model="m", reference="closed-form", theory_supported=True, seed=0, rows=[row])
    assert report.to_frame()["tv_norm"].tolist() == [pytest.approx(0.1904)]
    payload = report.to_dict()
    assert payload["rows"][0]["tv_norm"] == pytest.approx(0.1904)
    assert "tv_norm" in payload["tv_convention"]


def test_bootstrap_error_shrinks_with_replicas(linear):
    reference = reference_qsd(linear, "closed-form")
    few = bias_experiment(linear, [4], 20.0, 4.0, 3, reference, seed=5, jobs=1, bootstrap=100)
    many = bias_experiment(linear, [4], 20.0, 4.0, 24, reference, seed=5, jobs=1, bootstrap=100)
    assert 0.0 < many.rows[0].se < few.rows[0].se
    assert few.rows[0].reference_se == 0.0


def test_bias_experiment_rows(linear):
    reference = reference_qsd(linear, "closed-form")
    kwargs = dict(t_max=20.0, t_burn=4.0, replicas=3, reference=reference, seed=4, jobs=1,
                  reference_kind="closed-form", bootstrap=20)
    report = bias_experiment(linear, [2, 5], **kwargs)
    frame = report.to_frame()
    assert frame["N"].tolist() == [2, 5]
    assert frame["tv"].between(0, 1).all()
    assert (frame["se"] >= 0).all()
    assert set(frame["reference"]) == {"closed-form"}
    assert report.theory_supported
    again = bias_experiment(linear, [2, 5], **kwargs).to_frame()
    pd.testing.assert_frame_equal(frame, again)


def test_replica_estimator(linear):
    report = bias_experiment(linear, [3], 10.0, None, 3, reference_qsd(linear, "closed-form"),
                             seed=1, jobs=1, estimator="replica", bootstrap=10)
    row = report.rows[0]
    assert row.estimator == "replica"
    assert row.t_burn == 2.0


def test_flagged_rows_are_kept(linear):
    report = bias_experiment(linear, [2], 5.0, 1.0, 2, reference_qsd(linear, "closed-form"),
                             seed=0, jobs=1, stationarity_tv=0.0, bootstrap=5)
    assert report.flagged
    assert report.rows[0].nonstationary_runs == 2
    assert len(report.to_dict()["rows"]) == 1


@pytest.mark.parametrize("N_list", [[], [1, 10]])
def test_bad_particle_counts(linear, N_list):
    with pytest.raises(ConfigError):
        bias_experiment(linear, N_list, 5.0, 1.0, 2, reference_qsd(linear, "closed-form"))


def test_unsupported_models_are_tagged():
    drift = named_model("pure_drift", {"b": 1, "d": 3})
    ref = reference_qsd(drift, "eigenvector", M=50)
    report = bias_experiment(drift, [2], 5.0, 1.0, 2, ref, seed=0, jobs=1, bootstrap=5)
    assert not report.theory_supported
    assert report.to_dict()["theory_supported"] is False

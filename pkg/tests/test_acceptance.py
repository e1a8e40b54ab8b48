"""Long bias-table runs checked against known TV values, plus the FV moment and chaos bounds.

Known values are full l1 norms, so rows are compared through ``tv_norm``.
The table runs take minutes; they are marked slow and run with ``pytest -m slow``.
"""
import pytest

from qsdtools.estimate import (BiasReport, bias_experiment, decay_fit, marginal_check,
                               phi_time_average, reference_qsd)
from qsdtools.lyapunov import builtin_phi, fit_certificate, min_particles, moment_bound
from qsdtools.simulate import initial_positions, run_replicas

LINEAR_ROWS = {2: 0.190, 10: 4.5e-2, 100: 5.0e-3}
LOGISTIC_ROWS = {2: 2.0e-2, 10: 3.0e-3, 100: 3.6e-4}

# N -> (t_max, t_burn, replicas); the noise floor of the TV estimate falls like
# 1/sqrt(N * replicas * (t_max - t_burn)) and must sit below each row's value
LOGISTIC_BUDGET = {2: (1200.0, 200.0, 40), 10: (1600.0, 200.0, 40), 100: (1500.0, 100.0, 80)}


def _within_factor_two(report, expected):
    for row in report.rows:
        assert expected[row.N] / 2 <= row.tv_norm <= expected[row.N] * 2, row


@pytest.mark.slow
def test_linear_bias_table(linear):
    reference = reference_qsd(linear, "closed-form")
    report = bias_experiment(linear, list(LINEAR_ROWS), 500.0, 100.0, 20, reference, seed=2024,
                             reference_kind="closed-form")
    _within_factor_two(report, LINEAR_ROWS)
    assert report.rows[0].tv_norm == pytest.approx(0.190, abs=0.02)
    assert all(row.se >= 0 for row in report.rows)
    assert decay_fit(report).slope == pytest.approx(-1.0, abs=0.3)


@pytest.mark.slow
def test_logistic_bias_table(logistic):
    reference = reference_qsd(logistic, "eigenvector", M=400)
    report = BiasReport(model=logistic.name, reference="eigenvector", theory_supported=True, seed=2024)
    for N, (t_max, t_burn, replicas) in LOGISTIC_BUDGET.items():
        report.rows += bias_experiment(logistic, [N], t_max, t_burn, replicas, reference,
                                       seed=2024).rows
    for row in report.rows:
        assert row.se < row.tv, row
    _within_factor_two(report, LOGISTIC_ROWS)
    assert decay_fit(report).slope == pytest.approx(-1.0, abs=0.35)


def test_stationary_moment_bound(linear):
    lambda1 = 2.05
    phi = builtin_phi("sqrt-ratio-power", linear)
    cert = fit_certificate(linear, phi, lambda1, 200)
    assert cert.valid and cert.h1
    N = 50
    assert N >= min_particles(lambda1, linear.d1)
    runs = run_replicas(linear, initial_positions(N), 30.0, 3, seed=11, t_burn=10.0, jobs=1)
    mean, se = phi_time_average(runs, phi)
    assert mean <= moment_bound(cert.C, lambda1, linear.d1, N) + 3 * se


@pytest.mark.slow
def test_finite_time_chaos_bound(linear):
    res = marginal_check(linear, N=200, x0=2, t=1.0, states={1, 2, 3}, replicas=500, seed=7)
    assert res["ok"], res

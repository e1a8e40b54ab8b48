import pytest

from qsdtools.errors import ModelError
from qsdtools.model import named_model, table_model
from qsdtools.validate import require_valid, validate


def test_named_family_passes(linear):
    report = validate(linear, check_upto=500)
    assert report.ok
    assert report.summary().startswith("[OK]")
    assert report.checked_upto == 500


def test_zero_birth_rate_is_reported():
    report = validate(table_model([0, 1, 1, 0, 1], [0, 1, 1, 1, 1]))
    assert not report.ok
    assert "birth rate zero at i=3" in report.failures


def test_every_violation_is_collected():
    report = validate(table_model([1, 1, -1], [0, 0, 1]))
    assert "state 0 must be absorbing (b_0 = d_0 = 0)" in report.failures
    assert "death rate zero at i=1" in report.failures
    assert "birth rate negative at i=2" in report.failures
    assert report.summary().count("[VALIDATION ERROR]") == len(report.failures)


def test_table_checked_to_its_end():
    report = validate(table_model([0, 1, 1], [0, 1, 1], tail="error"))
    assert report.checked_upto == 2
    report = validate(table_model([0, 1, 1], [0, 1, 1], tail="constant"))
    assert report.checked_upto == 3


def test_warnings_do_not_fail(caplog):
    report = validate(named_model("pure_drift", {"b": 2, "d": 1}), check_upto=50)
    assert report.ok
    assert any("absorption series converges" in w for w in report.warnings)
    assert any("not backed by theory" in w for w in report.warnings)


def test_require_valid_raises():
    with pytest.raises(ModelError, match="rate zero"):
        require_valid(table_model([0, 0, 1], [0, 1, 1]))


def test_require_valid_returns_model(logistic):
    assert require_valid(logistic) is logistic

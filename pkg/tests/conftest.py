import pytest

from qsdtools.model import named_model


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in ("QSD_SEED", "QSD_JOBS", "QSD_OUT_DIR", "QSD_LOG_LEVEL",
                "QSD_STATIONARITY_TV", "QSD_TRUNCATION_MASS"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def linear():
    return named_model("linear", {"b": 1, "d": 2})


@pytest.fixture
def logistic():
    return named_model("logistic", {"b": 2, "c": 1, "d": 1})


@pytest.fixture
def power():
    return named_model("power", {"b": 1, "d": 4, "a": 1})


@pytest.fixture
def example3():
    return named_model("example3")

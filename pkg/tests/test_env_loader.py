import json
import logging

import pytest

from qsdtools.env_loader import (DEFAULTS, configure_logging, env_float, env_int, get_config,
                                 load_experiment_config)
from qsdtools.errors import ConfigError
from qsdtools.export import ExportManager, read_csv_meta
from qsdtools.measures import EmpiricalMeasure


def test_defaults_without_env_file(tmp_path):
    cfg = get_config(tmp_path)
    assert cfg == DEFAULTS
    assert env_int(cfg, "QSD_SEED") is None
    assert env_float(cfg, "QSD_STATIONARITY_TV") == 0.1


def test_env_values_are_parsed(monkeypatch, tmp_path):
    monkeypatch.setenv("QSD_JOBS", "3")
    monkeypatch.setenv("QSD_TRUNCATION_MASS", "oops")
    cfg = get_config(tmp_path)
    assert env_int(cfg, "QSD_JOBS") == 3
    with pytest.raises(ConfigError, match="QSD_TRUNCATION_MASS"):
        env_float(cfg, "QSD_TRUNCATION_MASS")


def test_experiment_sections(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"version": "1.0.0", "model": {"family": "linear", "b": 1, "d": 2},
                                "bias-table": {"N_list": [2, 10], "replicas": 20}}))
    sections = load_experiment_config(path)
    assert set(sections) == {"model", "bias-table"}
    assert sections["bias-table"]["N_list"] == [2, 10]


@pytest.mark.parametrize("body,message", [
    ({"plot": {}}, "unknown section 'plot'"),
    ({"fv": {"N": 2, "colour": "red"}}, "unknown key 'colour'"),
    ({"fv": [1, 2]}, "key-value object"),
])
def test_experiment_errors(tmp_path, body, message):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(body))
    with pytest.raises(ConfigError, match=message):
        load_experiment_config(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text('{\n  "fv": {"N": }\n}')
    with pytest.raises(ConfigError, match="line 2"):
        load_experiment_config(path)


def test_configure_logging_format(capsys):
    configure_logging("INFO")
    logging.getLogger("qsdtools.test").info("hello")
    assert "[INFO] hello" in capsys.readouterr().err
    configure_logging("WARNING")
    with pytest.raises(ConfigError):
        configure_logging("LOUD")


def test_export_manager_header(tmp_path):
    mgr = ExportManager(tmp_path / "out", {"version": "1.0.0", "seed": 5, "config": {"fv": {"N": 2}}},
                        stamp=False)
    path = mgr.export_measure(EmpiricalMeasure({1: 3, 2: 1}), "hist.csv")
    assert read_csv_meta(path) == {"version": "1.0.0", "seed": 5, "config": {"fv": {"N": 2}}}
    assert path.read_text().splitlines()[3] == "state,weight"
    assert mgr.written == [path]

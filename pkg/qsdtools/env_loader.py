from __future__ import annotations
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional
try:
    from dotenv import load_dotenv
except Exception:
    load_dotenv = None

from .errors import ConfigError

DEFAULTS = {
    "QSD_SEED": "",
    "QSD_JOBS": "",
    "QSD_OUT_DIR": "out",
    "QSD_LOG_LEVEL": "WARNING",
    "QSD_STATIONARITY_TV": "0.1",
    "QSD_TRUNCATION_MASS": "1e-6",
}

# keys each command section of an experiment file may carry
SECTION_KEYS = {
    "model": {"family", "b", "d", "a", "c", "b1", "d1", "birth", "death", "tail", "table_file", "name"},
    "xi1": {"n_trunc", "tol", "M", "k_max"},
    "qsd": {"x", "j_max", "n_trunc", "tol", "truncation_mass"},
    "fv": {"N", "x0", "t_max", "t_burn", "observe", "replicas", "seed", "jobs", "events",
           "stationarity_tv"},
    "bias-table": {"N_list", "t_max", "t_burn", "replicas", "seed", "jobs", "estimator",
                   "reference", "M", "N0", "N0_replicas", "reference_t_max", "bootstrap", "stationarity_tv"},
    "lyapunov": {"phi", "lambda1", "C", "i_max", "phi_values", "phi_b", "phi_d"},
    "semigroup": {"x0", "t", "M", "tol"},
}


def get_config(base_dir: Path) -> dict:
    env_path = base_dir / ".env"
    if load_dotenv and env_path.exists():
        load_dotenv(env_path)
    cfg = {}
    for k, v in DEFAULTS.items():
        cfg[k] = os.getenv(k, v)
    return cfg


def env_int(cfg: dict, key: str) -> Optional[int]:
    raw = str(cfg.get(key, "")).strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}")


def env_float(cfg: dict, key: str) -> float:
    raw = str(cfg.get(key, DEFAULTS[key])).strip()
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}")


def load_experiment_config(path: Path) -> dict[str, dict[str, Any]]:
    """Read a JSON experiment file: one flat section per command plus an optional ``model``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path.name}: line {e.lineno} column {e.colno}: {e.msg}")
    return parse_sections(raw, path.name)


def parse_sections(raw: Any, source: str) -> dict[str, dict[str, Any]]:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object of sections")
    sections = {}
    for name, body in raw.items():
        if name in ("version", "description"):
            continue
        if name not in SECTION_KEYS:
            raise ConfigError(f"{source}: unknown section '{name}'")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: section '{name}' must be a key-value object")
        unknown = sorted(set(body) - SECTION_KEYS[name])
        if unknown:
            raise ConfigError(f"{source}: section '{name}' has unknown key '{unknown[0]}'")
        sections[name] = dict(body)
    return sections


class _BracketFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return f"[{record.levelname}] {record.getMessage()}"


def configure_logging(level: str = "WARNING") -> None:
    """Console logging for the ``qsdtools`` loggers, on stderr so stdout stays a clean summary."""
    root = logging.getLogger("qsdtools")
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level '{level}'")
    root.setLevel(numeric)
    for old in [h for h in root.handlers if getattr(h, "_qsd", False)]:
        root.removeHandler(old)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_BracketFormatter())
    handler._qsd = True
    root.addHandler(handler)

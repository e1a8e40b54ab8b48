"""Birth-and-death models on N = {0, 1, 2, ...} with 0 absorbing.

Rates are evaluated on demand for the states a caller asks about; nothing is
tabulated to infinity. Named families carry their parameters, tabulated models
carry two finite arrays and a tail rule.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .errors import ModelError, NumericalError

logger = logging.getLogger(__name__)

# family -> required parameter names
FAMILIES: dict[str, tuple[str, ...]] = {
    "power": ("b", "d", "a"),
    "linear": ("b", "d"),
    "logistic": ("b", "c", "d"),
    "constant_tail": ("b", "d", "b1", "d1"),
    "pure_drift": ("b", "d"),
    "example3": (),
}
TAIL_RULES = ("error", "constant")
_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class BirthDeathModel:
    """Rate sequences (b_i, d_i) of an absorbed birth-and-death process.

    Either ``family`` names a closed form and ``params`` holds its numbers, or
    ``family == "table"`` and the rates come from ``birth_table``/``death_table``
    (index i = state i) with ``tail`` deciding what happens past the table.
    """

    name: str
    family: str
    params: tuple[tuple[str, float], ...] = ()
    birth_table: Optional[tuple[float, ...]] = None
    death_table: Optional[tuple[float, ...]] = None
    tail: str = "error"

    @property
    def param_map(self) -> dict[str, float]:
        return dict(self.params)

    def param(self, key: str) -> float:
        return self.param_map[key]

    @property
    def is_table(self) -> bool:
        return self.family == "table"

    @property
    def table_size(self) -> Optional[int]:
        return len(self.birth_table) if self.is_table else None

    def rates(self, i) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (b_i, d_i) for integer state(s) ``i``."""
        idx = np.asarray(i, dtype=np.int64)
        if np.any(idx < 0):
            raise ModelError(f"{self.name}: negative state queried")
        if self.is_table:
            return self._table_rates(idx)
        x = idx.astype(float)
        p = self.param_map
        fam = self.family
        if fam in ("power", "linear"):
            a = p.get("a", 1.0)
            scale = np.where(idx > 0, x ** a, 0.0)
            b, d = p["b"] * scale, p["d"] * scale
        elif fam == "logistic":
            b = p["b"] * x
            d = p["d"] * x + p["c"] * x * (x - 1.0)
        elif fam == "constant_tail":
            b = np.where(idx >= 2, p["b"], np.where(idx == 1, p["b1"], 0.0))
            d = np.where(idx >= 2, p["d"], np.where(idx == 1, p["d1"], 0.0))
        elif fam == "pure_drift":
            b = np.where(idx >= 1, p["b"], 0.0)
            d = np.where(idx >= 1, p["d"], 0.0)
        elif fam == "example3":
            # |sin(i pi / 2)| is exactly the parity of i
            b = np.where(idx >= 1, (idx % 2) * x + 1.0, 0.0)
            d = 4.0 * x
        else:
            raise ModelError(f"unknown family '{fam}'")
        return np.asarray(b, dtype=float), np.asarray(d, dtype=float)

    def _table_rates(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        birth = np.asarray(self.birth_table, dtype=float)
        death = np.asarray(self.death_table, dtype=float)
        last = len(birth) - 1
        if np.any(idx > last):
            if self.tail != "constant":
                raise ModelError(
                    f"{self.name}: state {int(idx.max())} is beyond the rate table (size {last + 1}) "
                    f"and tail rule is '{self.tail}'")
            idx = np.minimum(idx, last)
        return birth[idx], death[idx]

    def death(self, i) -> np.ndarray:
        return self.rates(i)[1]

    def rate_pair(self, i: int) -> tuple[float, float]:
        b, d = self.rates(i)
        return float(b), float(d)

    def rate_arrays(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """(b_0..b_n, d_0..d_n)."""
        return self.rates(np.arange(n + 1))

    @property
    def d1(self) -> float:
        return self.rate_pair(1)[1]


def _number(family: str, key: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ModelError(f"parameter '{key}' for family '{family}' must be numeric, got {value!r}")
    if not math.isfinite(v) or v <= 0:
        raise ModelError(f"parameter '{key}' for family '{family}' must be positive, got {v}")
    return v


def named_model(family: str, params: Optional[Mapping[str, float]] = None) -> BirthDeathModel:
    """Build one of the built-in families with its exact closed-form rates."""
    params = dict(params or {})
    if family not in FAMILIES:
        raise ModelError(f"unknown family '{family}'; expected one of {sorted(FAMILIES)}")
    required = FAMILIES[family]
    extra = sorted(set(params) - set(required))
    if extra:
        raise ModelError(f"unknown parameter(s) {extra} for family '{family}'")
    for key in required:
        if key not in params or params[key] is None:
            raise ModelError(f"missing parameter '{key}' for family '{family}'")
    values = {k: _number(family, k, params[k]) for k in required}

    if family in ("power", "linear", "pure_drift", "constant_tail") and values["b"] >= values["d"]:
        logger.warning(f"{family}: b={values['b']} >= d={values['d']}; absorption or QSD results may not apply")
    if family == "constant_tail":
        gap = (math.sqrt(values["d"]) - math.sqrt(values["b"])) ** 2
        if gap <= values["d1"]:
            logger.warning(f"constant_tail: (sqrt(d)-sqrt(b))^2={gap:.6g} <= d1={values['d1']}; "
                           "the sqrt-ratio Lyapunov function does not certify this model")

    label = ",".join(f"{k}={values[k]:g}" for k in required)
    return BirthDeathModel(name=f"{family}({label})", family=family,
                           params=tuple((k, values[k]) for k in required))


def table_model(birth, death, tail: str = "error", name: str = "table") -> BirthDeathModel:
    birth = tuple(float(v) for v in birth)
    death = tuple(float(v) for v in death)
    if len(birth) != len(death):
        raise ModelError(f"rate tables differ in length: {len(birth)} birth vs {len(death)} death")
    if len(birth) < 2:
        raise ModelError("rate tables need at least states 0 and 1")
    if tail not in TAIL_RULES:
        raise ModelError(f"tail rule must be one of {TAIL_RULES}, got '{tail}'")
    return BirthDeathModel(name=name, family="table", birth_table=birth, death_table=death, tail=tail)


def load_rate_table(path: Path, tail: str = "error") -> BirthDeathModel:
    """Read a CSV with columns i,birth,death (i = 0..L-1, contiguous)."""
    path = Path(path)
    if not path.exists():
        raise ModelError(f"Missing rate table: {path}")
    df = pd.read_csv(path)
    for c in ("i", "birth", "death"):
        if c not in df.columns:
            raise ModelError(f"{path.name} missing required column '{c}'")
    df = df.sort_values("i")
    if list(df["i"]) != list(range(len(df))):
        raise ModelError(f"{path.name}: states must be 0..{len(df) - 1} without gaps")
    return table_model(df["birth"], df["death"], tail=tail, name=path.stem)


def model_from_config(section: Mapping, base_dir: Optional[Path] = None) -> BirthDeathModel:
    """Model from a config section: family + numbers, or an explicit table."""
    section = {k: v for k, v in dict(section).items() if v is not None}
    family = section.pop("family", None)
    if family is None:
        raise ModelError("model section needs a 'family'")
    if family == "table":
        tail = section.pop("tail", "error")
        if "table_file" in section:
            path = Path(section.pop("table_file"))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return load_rate_table(path, tail=tail)
        if "birth" not in section or "death" not in section:
            raise ModelError("table model needs 'birth' and 'death' arrays or a 'table_file'")
        return table_model(section["birth"], section["death"], tail=tail, name=section.get("name", "table"))
    return named_model(family, section)


def absorption_series_partial(model: BirthDeathModel, n: int) -> float:
    """sum_{k=1}^{n} (d_1...d_k)/(b_1...b_k), accumulated in log space."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    b, d = model.rates(np.arange(1, n + 1))
    log_terms = np.cumsum(np.log(d) - np.log(b))
    total = logsumexp(log_terms)
    if not np.isfinite(total) or total >= _LOG_MAX:
        raise NumericalError(f"{model.name}: absorption series overflows at n={n} (log-sum {total:.3g})")
    return float(np.exp(total))


def absorption_verdict(model: BirthDeathModel) -> str:
    """Analytic verdict on divergence of the absorption series for named families."""
    if model.is_table:
        return "unknown"
    if model.family in ("logistic", "example3"):
        return "diverges"
    p = model.param_map
    return "diverges" if p["d"] >= p["b"] else "converges"


def closed_form_qsd_available(model: BirthDeathModel) -> bool:
    return model.family in ("linear", "power") and model.param_map.get("a", 1.0) == 1.0 \
        and model.param("b") < model.param("d")


def theory_supported(model: BirthDeathModel) -> bool:
    """False for pure-drift rates, where FV convergence is an open problem."""
    if model.family == "pure_drift":
        return False
    if model.family == "constant_tail":
        p = model.param_map
        return (math.sqrt(p["d"]) - math.sqrt(p["b"])) ** 2 > p["d1"]
    return True

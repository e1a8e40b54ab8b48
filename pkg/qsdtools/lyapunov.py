"""Drift (Lyapunov) certificates L phi <= -lambda1 phi + C for birth-and-death chains,
plus the particle-count and moment bounds that follow from them."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .model import BirthDeathModel
from .spectral import s_diagnostic
from .validate import require_valid

logger = logging.getLogger(__name__)

Phi = Callable[[np.ndarray], np.ndarray]
PHI_NAMES = ("sqrt-ratio-power", "two-power", "table")


def sqrt_ratio_power(b: float, d: float) -> Phi:
    """phi(i) = sqrt(d/b)^i, phi(0) = 0."""
    base = math.sqrt(d / b)

    def phi(i):
        i = np.asarray(i)
        return np.where(i > 0, np.power(base, i.astype(float)), 0.0)
    phi.__name__ = f"sqrt_ratio_power({base:g})"
    return phi


def two_power(i) -> np.ndarray:
    """phi(i) = 2^i, phi(0) = 0."""
    i = np.asarray(i)
    return np.where(i > 0, np.power(2.0, i.astype(float)), 0.0)


def table_phi(values: Sequence[float]) -> Phi:
    """phi from explicit values phi(1), phi(2), ...; phi(0) = 0."""
    table = np.concatenate(([0.0], np.asarray(values, dtype=float)))

    def phi(i):
        i = np.asarray(i)
        if np.any(i >= len(table)):
            raise ConfigError(f"phi table covers states up to {len(table) - 1}, asked for {int(i.max())}")
        return table[i]
    phi.__name__ = "table_phi"
    return phi


def builtin_phi(name: str, model: Optional[BirthDeathModel] = None, **params) -> Phi:
    if name == "sqrt-ratio-power":
        if "b" in params and "d" in params:
            return sqrt_ratio_power(params["b"], params["d"])
        if model is None or model.is_table or "b" not in model.param_map:
            raise ConfigError("sqrt-ratio-power needs b and d (or a model with b, d parameters)")
        return sqrt_ratio_power(model.param("b"), model.param("d"))
    if name == "two-power":
        return two_power
    if name == "table":
        if "values" not in params:
            raise ConfigError("phi 'table' needs 'values'")
        return table_phi(params["values"])
    raise ConfigError(f"unknown phi '{name}'; expected one of {PHI_NAMES}")


def generator_apply(model: BirthDeathModel, phi: Phi, i: int) -> float:
    """L phi(i) = b_i (phi(i+1) - phi(i)) + d_i (phi(i-1) - phi(i))."""
    if i < 1:
        raise ValueError("i must be a state >= 1")
    b, d = model.rate_pair(i)
    lo, mid, hi = (float(v) for v in phi(np.array([i - 1, i, i + 1])))
    return b * (hi - mid) + d * (lo - mid)


def generator_values(model: BirthDeathModel, phi: Phi, i_max: int):
    """(phi(1..i_max), L phi(1..i_max)) evaluated together."""
    states = np.arange(0, i_max + 2)
    with np.errstate(over="raise", invalid="raise"):
        try:
            values = np.asarray(phi(states), dtype=float)
        except FloatingPointError:
            raise NumericalError(f"phi overflows below i={i_max + 1}; lower i_max")
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"phi is not finite on 0..{i_max + 1}; lower i_max")
    b, d = model.rates(states[1:-1])
    lphi = b * (values[2:] - values[1:-1]) + d * (values[:-2] - values[1:-1])
    return values[1:-1], lphi


@dataclass
class LyapunovCertificate:
    model: str
    lambda1: float
    C: float
    checked_range: tuple[int, int]
    margin: float
    witness: Optional[int]
    h1: bool
    attraction: Optional[bool]
    phi_unbounded: bool
    notes: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.margin >= 0

    def to_dict(self) -> dict:
        return {"model": self.model, "lambda1": self.lambda1, "C": self.C,
                "checked_range": list(self.checked_range), "margin": self.margin,
                "witness": self.witness, "valid": self.valid, "h1": self.h1,
                "attraction": self.attraction, "phi_unbounded": self.phi_unbounded,
                "notes": list(self.notes)}


def _grows(values: np.ndarray) -> bool:
    # heuristic: last quarter nondecreasing and above everything in the first half
    n = len(values)
    if n < 4:
        return False
    tail = values[3 * n // 4:]
    return bool(np.all(np.diff(tail) >= 0) and values[-1] > values[: n // 2].max())


def check_lyapunov(model: BirthDeathModel, phi: Phi, lambda1: float, C: float, i_max: int,
                   xi1: Optional[float] = None) -> LyapunovCertificate:
    """Check L phi(i) <= -lambda1 phi(i) + C pointwise on 1..i_max."""
    require_valid(model)
    if C < 0:
        raise ValueError("C must be nonnegative")
    if float(np.asarray(phi(np.array([0])))[0]) != 0.0:
        raise ValueError("phi(0) must be 0")
    values, lphi = generator_values(model, phi, i_max)
    if np.any(values <= 0):
        bad = int(np.argmax(values <= 0)) + 1
        raise ValueError(f"phi must be positive on N*, phi({bad}) = {values[bad - 1]}")
    slack = -lphi - lambda1 * values + C
    worst = int(np.argmin(slack))
    margin = float(slack[worst])
    witness = worst + 1 if margin < 0 else None
    d1 = model.d1
    cert = LyapunovCertificate(
        model=model.name, lambda1=float(lambda1), C=float(C), checked_range=(1, i_max),
        margin=margin, witness=witness, h1=lambda1 > d1,
        attraction=None if xi1 is None else lambda1 > xi1,
        phi_unbounded=_grows(values))
    if witness is not None:
        cert.notes.append(f"drift inequality fails at i={witness}")
    if not cert.h1:
        cert.notes.append(f"lambda1={lambda1:g} <= d1={d1:g}")
    if not cert.phi_unbounded:
        cert.notes.append("phi does not appear to tend to infinity (heuristic)")
    return cert


def fit_certificate(model: BirthDeathModel, phi: Phi, lambda1: float, i_max: int,
                    xi1: Optional[float] = None) -> LyapunovCertificate:
    """Certificate with the smallest C that makes the inequality hold on 1..i_max."""
    values, lphi = generator_values(model, phi, i_max)
    C = float(max(0.0, np.max(lphi + lambda1 * values)))
    return check_lyapunov(model, phi, lambda1, C, i_max, xi1=xi1)


def min_particles(lambda1: float, d1: float) -> int:
    """Smallest integer N with N > lambda1 / (lambda1 - d1)."""
    if lambda1 <= d1:
        raise ValueError(f"need lambda1 > d1, got {lambda1} <= {d1}")
    return math.floor(lambda1 / (lambda1 - d1)) + 1


def moment_bound(C: float, lambda1: float, d1: float, N: int) -> float:
    """Bound C / (lambda1 - d1 N/(N-1)) on the stationary mean of mu^N(phi)."""
    if N < 2:
        raise ValueError("N must be at least 2")
    denom = lambda1 - d1 * N / (N - 1)
    if denom <= 0:
        raise ValueError(f"N={N} is too small: need N > {lambda1 / (lambda1 - d1):.4g}")
    return C / denom


def chaos_bound(d1: float, t: float, N: int, f_sup: float = 1.0) -> float:
    """2 (1 + sqrt 2) e^{d1 t} ||f|| / sqrt N."""
    return 2.0 * (1.0 + math.sqrt(2.0)) * math.exp(d1 * t) * f_sup / math.sqrt(N)


def assumption_summary(model: BirthDeathModel, phi: Optional[Phi] = None,
                       lambda1: Optional[float] = None, i_max: int = 200,
                       k_max: int = 2000) -> dict:
    """Which of the two FV convergence regimes the model is known to fall in."""
    s = s_diagnostic(model, k_max)
    out = {"model": model.name, "s_partial": s.partial_sum, "s_trend": s.trend,
           "h2": s.trend == "converging", "h1": False}
    if phi is not None and lambda1 is not None:
        cert = fit_certificate(model, phi, lambda1, i_max)
        out.update(h1=cert.valid and cert.h1 and cert.phi_unbounded, C=cert.C, lambda1=lambda1)
    return out

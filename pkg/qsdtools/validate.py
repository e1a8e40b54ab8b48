from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ModelError
from .model import BirthDeathModel, absorption_verdict, theory_supported

logger = logging.getLogger(__name__)

DEFAULT_CHECK_RANGE = 10_000


@dataclass
class ValidationReport:
    model: str
    checked_upto: int
    failures: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def _fail(self, msg: str):
        self.failures.append(msg)

    def _warn(self, msg: str):
        self.warnings.append(msg)

    def summary(self) -> str:
        if self.ok:
            return f"[OK] {self.model} passed validation (states 0..{self.checked_upto})."
        return "\n".join(f"[VALIDATION ERROR] {m}" for m in self.failures)


def _first(mask: np.ndarray, states: np.ndarray) -> int:
    return int(states[np.argmax(mask)])


def validate(model: BirthDeathModel, check_upto: int = DEFAULT_CHECK_RANGE) -> ValidationReport:
    """Check the rate invariants on states 0..check_upto and collect every violation."""
    if model.is_table:
        check_upto = model.table_size - 1 + (1 if model.tail == "constant" else 0)
    report = ValidationReport(model=model.name, checked_upto=check_upto)
    states = np.arange(check_upto + 1)
    b, d = model.rates(states)

    if b[0] != 0 or d[0] != 0:
        report._fail("state 0 must be absorbing (b_0 = d_0 = 0)")

    pos = states >= 1
    for label, r in (("birth", b), ("death", d)):
        bad = pos & ~np.isfinite(r)
        if bad.any():
            report._fail(f"{label} rate not finite at i={_first(bad, states)} ({int(bad.sum())} states)")
        zero = pos & (r == 0)
        if zero.any():
            report._fail(f"{label} rate zero at i={_first(zero, states)}")
        neg = pos & (r < 0)
        if neg.any():
            report._fail(f"{label} rate negative at i={_first(neg, states)}")

    if absorption_verdict(model) == "converges":
        report._warn("absorption series converges: absorption at 0 is not almost sure")
    if not theory_supported(model):
        report._warn("rates fall outside the Lyapunov/unique-QSD regimes; FV results are not backed by theory")
    for w in report.warnings:
        logger.warning(f"{model.name}: {w}")
    return report


@lru_cache(maxsize=256)
def require_valid(model: BirthDeathModel, check_upto: int = 1000) -> BirthDeathModel:
    report = validate(model, check_upto=check_upto)
    if not report.ok:
        raise ModelError(f"{model.name}: " + "; ".join(report.failures))
    return model

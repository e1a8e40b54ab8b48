"""Deterministic QSD computations for birth-and-death models.

Q_n(x) grows super-exponentially in n, so the three-term recursion is run on
the ratios r_n = Q_{n+1}(x) / Q_n(x) and every product (pi_k, Q_n) is kept in
log space until the caller asks for plain numbers.

Convention: b_n Q_{n+1}(x) = (b_n + d_n - x) Q_n(x) - d_n Q_{n-1}(x), Q_0 = 0,
Q_1 = 1, so that L Q(x) = -x Q(x) for the generator L of the chain.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import pandas as pd
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .errors import NumericalError
from .measures import EmpiricalMeasure
from .model import BirthDeathModel
from .validate import require_valid

logger = logging.getLogger(__name__)

SIGN_EPS = 1e-13
X_CEILING = 1e12
_LOG_MAX = math.log(np.finfo(float).max)
_LOG_TINY = math.log(np.finfo(float).tiny)


@dataclass(frozen=True)
class RatioSequence:
    x: float
    ratios: np.ndarray
    first_nonpositive: Optional[int] = None

    @property
    def all_positive(self) -> bool:
        return self.first_nonpositive is None

    def log_q(self) -> np.ndarray:
        """log Q_1 .. log Q_{len(ratios)+1}; only defined while every Q_n > 0."""
        if not self.all_positive:
            raise NumericalError(f"Q_{self.first_nonpositive}({self.x}) <= 0; log Q undefined")
        return np.concatenate(([0.0], np.cumsum(np.log(self.ratios))))


@dataclass(frozen=True)
class SpectralResult:
    model: str
    xi1: float
    lo: float
    hi: float
    n_trunc: int
    tol: float
    pi: np.ndarray

    def to_dict(self) -> dict:
        return {"model": self.model, "xi1": self.xi1, "lo": self.lo, "hi": self.hi,
                "n_trunc": self.n_trunc, "tol": self.tol, "pi": self.pi.tolist()}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"k": np.arange(1, len(self.pi) + 1), "pi": self.pi})


@dataclass(frozen=True)
class QsdVector:
    """Weights over states 1..j_max (``weights[j-1]`` is the weight of state j)."""

    weights: np.ndarray
    x: Optional[float]
    truncation_mass: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def states(self) -> np.ndarray:
        return np.arange(1, len(self.weights) + 1)

    def to_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_array(self.weights)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"state": self.states, "weight": self.weights})

    def to_dict(self) -> dict:
        return {"x": self.x, "truncation_mass": self.truncation_mass,
                "weights": self.weights.tolist(), **self.meta}


# ---------------------------------------------------------------- Q_n ratios

def _scan_ratios(b, d, x: float, n_max: int):
    """Ratios r_1..r_k and the index of the first Q_n <= 0 (or None)."""
    ratios = []
    prev = None
    for n in range(1, n_max + 1):
        bn, dn = b[n], d[n]
        if prev is None:
            back = 0.0
        else:
            back = dn / prev
        r = ((bn + dn - x) - back) / bn
        ratios.append(r)
        scale = (bn + dn + abs(x) + back) / bn
        if r <= SIGN_EPS * scale:
            return ratios, n + 1
        prev = r
    return ratios, None


def q_ratios(model: BirthDeathModel, x: float, n_max: int) -> RatioSequence:
    """Ratios Q_{n+1}(x)/Q_n(x) for n = 1..n_max, stopping at the first sign change."""
    if n_max < 1:
        raise ValueError("n_max must be a positive integer")
    require_valid(model)
    b, d = model.rate_arrays(n_max)
    ratios, first = _scan_ratios(b.tolist(), d.tolist(), float(x), n_max)
    return RatioSequence(x=float(x), ratios=np.asarray(ratios), first_nonpositive=first)


def q_direct(model: BirthDeathModel, x: float, n: int) -> list[Fraction]:
    """Q_1..Q_n by the plain recursion in exact rational arithmetic (reference only)."""
    b, d = model.rate_arrays(n)
    xf = Fraction(x)
    q_prev, q = Fraction(0), Fraction(1)
    out = [q]
    for k in range(1, n):
        bk, dk = Fraction(float(b[k])), Fraction(float(d[k]))
        q_prev, q = q, ((bk + dk - xf) * q - dk * q_prev) / bk
        out.append(q)
    return out


def positive_upto(model: BirthDeathModel, x: float, n_trunc: int) -> bool:
    """True when Q_n(x) > 0 for every n <= n_trunc."""
    if n_trunc < 2:
        return True
    return q_ratios(model, x, n_trunc - 1).all_positive


@dataclass(frozen=True)
class QProfile:
    """Q_1(x)..Q_n(x) kept as logs; ``first_nonpositive`` is set when Q changes sign first."""

    x: float
    log_q: np.ndarray
    first_nonpositive: Optional[int] = None

    @property
    def min_q(self) -> float:
        if self.first_nonpositive is not None:
            return 0.0
        return float(np.exp(self.log_q.min()))

    @property
    def argmin(self) -> int:
        if self.first_nonpositive is not None:
            return self.first_nonpositive
        return int(np.argmin(self.log_q)) + 1

    def min_is_one(self, tol: float = 1e-9) -> bool:
        """At the decay parameter Q_1 = 1 is the smallest value."""
        return self.first_nonpositive is None and abs(self.min_q - 1.0) <= tol

    def values(self) -> np.ndarray:
        if self.first_nonpositive is not None:
            raise NumericalError(f"Q_{self.first_nonpositive}({self.x}) <= 0")
        if self.log_q.max() >= _LOG_MAX:
            raise NumericalError(f"Q_n({self.x}) overflows before n={len(self.log_q)}; use log_q")
        return np.exp(self.log_q)

    def to_dict(self) -> dict:
        return {"x": self.x, "n": len(self.log_q), "min_q": self.min_q, "argmin": self.argmin,
                "log_q_max": float(self.log_q.max()), "min_is_one": self.min_is_one()}


def q_profile(model: BirthDeathModel, x: float, n: int) -> QProfile:
    """Q_1(x)..Q_n(x) reconstructed from ratio products, in log space."""
    if n == 1:
        return QProfile(x=float(x), log_q=np.zeros(1))
    seq = q_ratios(model, x, n - 1)
    if not seq.all_positive:
        ratios = seq.ratios[:-1]
        log_q = np.concatenate(([0.0], np.cumsum(np.log(ratios))))
        return QProfile(x=float(x), log_q=log_q, first_nonpositive=seq.first_nonpositive)
    return QProfile(x=float(x), log_q=seq.log_q())


# ---------------------------------------------------------------- pi weights

def log_pi_weights(model: BirthDeathModel, k_max: int) -> np.ndarray:
    """log pi_1..log pi_{k_max}, pi_{k+1} = pi_k b_k / d_{k+1}."""
    if k_max < 1:
        raise ValueError("k_max must be a positive integer")
    b, d = model.rate_arrays(k_max)
    steps = np.log(b[1:k_max]) - np.log(d[2:k_max + 1])
    return np.concatenate(([0.0], np.cumsum(steps)))


def pi_weights(model: BirthDeathModel, k_max: int) -> np.ndarray:
    require_valid(model)
    log_pi = log_pi_weights(model, k_max)
    if log_pi.max() >= _LOG_MAX:
        raise NumericalError(f"pi_k overflows at k={int(np.argmax(log_pi >= _LOG_MAX)) + 1}")
    if log_pi.min() < _LOG_TINY:
        raise NumericalError(f"pi_k underflows at k={int(np.argmax(log_pi < _LOG_TINY)) + 1}; "
                             "use log_pi_weights")
    return np.exp(log_pi)


# ---------------------------------------------------------------- xi_1

def xi1(model: BirthDeathModel, n_trunc: int, tol: float = 1e-8, k_max: int = 30,
        x_ceiling: float = X_CEILING) -> SpectralResult:
    """Bisection for the largest x with Q_n(x) > 0 for all n <= n_trunc.

    The returned value is the lower end of the final bracket; the bracket itself
    sits above the true decay parameter and shrinks towards it as n_trunc grows.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if n_trunc < 2:
        raise ValueError("n_trunc must be at least 2")
    require_valid(model)
    b, d = model.rate_arrays(n_trunc)
    b, d = b.tolist(), d.tolist()

    def positive(x: float) -> bool:
        return _scan_ratios(b, d, x, n_trunc - 1)[1] is None

    lo, hi = 0.0, max(d[1], tol)
    while positive(hi):
        lo, hi = hi, 2.0 * hi
        if hi > x_ceiling:
            raise NumericalError(f"{model.name}: no sign change of Q_n below x={x_ceiling:g} "
                                 f"with n_trunc={n_trunc}")
    iterations = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if positive(mid):
            lo = mid
        else:
            hi = mid
        iterations += 1
    logger.debug(f"{model.name}: xi1 bracket [{lo:.12g}, {hi:.12g}] after {iterations} bisections")
    pi = pi_weights(model, min(k_max, n_trunc))
    return SpectralResult(model=model.name, xi1=lo, lo=lo, hi=hi, n_trunc=n_trunc, tol=tol, pi=pi)


def xi1_stabilized(model: BirthDeathModel, n_trunc: int, tol: float = 1e-8):
    """Run xi1 at n_trunc and 2 n_trunc; report whether the two agree within tol."""
    coarse = xi1(model, n_trunc, tol)
    fine = xi1(model, 2 * n_trunc, tol)
    agreed = abs(coarse.xi1 - fine.xi1) <= tol
    if not agreed:
        logger.warning(f"{model.name}: xi1 moved from {coarse.xi1:.10g} (n={n_trunc}) to "
                       f"{fine.xi1:.10g} (n={2 * n_trunc}); raise n_trunc")
    return coarse, fine, agreed


# ---------------------------------------------------------------- QSD family

def qsd_family(model: BirthDeathModel, x: float, j_max: int,
               truncation_threshold: Optional[float] = None) -> QsdVector:
    """rho_x(j) = (pi_j / d_1) x Q_j(x) for j <= j_max, renormalized."""
    if x <= 0:
        raise ValueError("x must be positive")
    if j_max < 1:
        raise ValueError("j_max must be a positive integer")
    require_valid(model)
    if j_max == 1:
        log_q = np.zeros(1)
    else:
        seq = q_ratios(model, x, j_max - 1)
        if not seq.all_positive:
            raise NumericalError(f"{model.name}: rho_x has a negative weight at j={seq.first_nonpositive} "
                                 f"(x={x} exceeds xi1 or numeric failure)")
        log_q = seq.log_q()
    log_w = log_pi_weights(model, j_max) + math.log(x) + log_q - math.log(model.d1)
    if log_w.max() >= _LOG_MAX:
        raise NumericalError(f"{model.name}: rho_x weight overflow")
    w = np.exp(log_w)
    mass = float(w.sum())
    truncation_mass = 1.0 - mass
    if truncation_threshold is not None and truncation_mass > truncation_threshold:
        raise NumericalError(f"{model.name}: truncation mass {truncation_mass:.3g} above "
                             f"{truncation_threshold:g}; raise j_max (now {j_max})")
    return QsdVector(weights=w / mass, x=float(x), truncation_mass=truncation_mass)


# ---------------------------------------------------------------- S diagnostic

@dataclass(frozen=True)
class SDiagnostic:
    partial_sum: float
    trend: str
    tail_slope: Optional[float] = None

    def __iter__(self):
        return iter((self.partial_sum, self.trend))


def _classify_trend(ks: np.ndarray, log_terms: np.ndarray):
    if len(ks) < 8:
        return "inconclusive", None
    k_max = int(ks[-1])
    window = (ks >= k_max // 4) & (ks <= k_max // 2)
    if window.sum() < 4:
        window = ks <= k_max // 2
    slope = float(np.polyfit(np.log(ks[window]), log_terms[window], 1)[0])
    if slope >= -1.1:
        return "diverging", slope
    if slope <= -1.5:
        return "converging", slope
    return "inconclusive", slope


def s_diagnostic(model: BirthDeathModel, k_max: int) -> SDiagnostic:
    """Partial sums of sum_{k>=2} (1/(d_k pi_k)) sum_{l>=k} pi_l and their tail trend.

    The inner sums are cut at k_max, so the trend is read off the terms with
    k in [k_max/4, k_max/2], well clear of the cut.
    """
    require_valid(model)
    if k_max < 2:
        return SDiagnostic(0.0, "inconclusive")
    log_pi = log_pi_weights(model, k_max)
    log_tail = np.logaddexp.accumulate(log_pi[::-1])[::-1]
    ks = np.arange(2, k_max + 1)
    log_terms = log_tail[ks - 1] - np.log(model.death(ks)) - log_pi[ks - 1]
    total = logsumexp(log_terms)
    if total >= _LOG_MAX:
        raise NumericalError(f"{model.name}: S partial sum overflows at k_max={k_max}")
    trend, slope = _classify_trend(ks, log_terms)
    return SDiagnostic(float(np.exp(total)), trend, slope)


# ---------------------------------------------------------------- truncated oracles

def _adjoint_band(model: BirthDeathModel, M: int) -> np.ndarray:
    """Banded storage of (-A)^T, A the sub-generator on states 1..M killed above M."""
    b, d = model.rates(np.arange(1, M + 1))
    ab = np.zeros((3, M))
    ab[0, 1:] = -d[1:]
    ab[1] = b + d
    ab[2, :-1] = -b[:-1]
    return ab


def truncated_decay_oracle(model: BirthDeathModel, M: int, tol: float = 1e-12,
                           max_iter: int = 20_000):
    """Smallest decay rate and left Perron vector of the M-state sub-generator.

    Inverse power iteration on (-A)^T with tridiagonal solves. Returns
    ``(xi1_upper, QsdVector)``; the vector's ``truncation_mass`` is the weight it
    puts on the top state M.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    require_valid(model)
    ab = _adjoint_band(model, M)
    v = np.full(M, 1.0 / M)
    lam_old = math.inf
    for it in range(1, max_iter + 1):
        y = solve_banded((1, 1), ab, v)
        s = float(y.sum())
        lam = 1.0 / s
        v_new = y / s
        done = abs(lam - lam_old) <= tol * lam and float(np.abs(v_new - v).sum()) <= tol * 10
        v, lam_old = v_new, lam
        if done:
            logger.debug(f"{model.name}: inverse iteration converged in {it} steps (M={M})")
            qsd = QsdVector(weights=v, x=lam, truncation_mass=float(v[-1]), meta={"iterations": it})
            return lam, qsd
    raise NumericalError(f"{model.name}: inverse iteration did not converge in {max_iter} steps (M={M})")


def _rk4_evolve(p0: np.ndarray, b: np.ndarray, d: np.ndarray, t: float, n: int):
    """n fixed RK4 steps of dp/dt = pA plus the leak flux b_M p_M."""
    h = t / n
    out_rate = b + d
    b_up, d_down, b_top = b[:-1], d[1:], b[-1]

    def rhs(p):
        dp = -out_rate * p
        dp[1:] += b_up * p[:-1]
        dp[:-1] += d_down * p[1:]
        return dp

    p = p0.copy()
    leak = 0.0
    for _ in range(n):
        k1 = rhs(p)
        p2 = p + 0.5 * h * k1
        k2 = rhs(p2)
        p3 = p + 0.5 * h * k2
        k3 = rhs(p3)
        p4 = p + h * k3
        k4 = rhs(p4)
        leak += h / 6.0 * b_top * (p[-1] + 2 * p2[-1] + 2 * p3[-1] + p4[-1])
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p, leak


def conditioned_semigroup(model: BirthDeathModel, mu0, t: float, M: int, tol: float = 1e-10,
                          leak_threshold: float = 1e-8, max_steps: int = 1 << 22) -> QsdVector:
    """Law of X_t given survival, started from mu0, on the truncated chain 0..M.

    Fixed-step RK4; the step count doubles until two successive grids agree
    within ``tol`` in l1. Mass pushed above M is discarded and reported as
    ``truncation_mass``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    require_valid(model)
    if not isinstance(mu0, EmpiricalMeasure):
        mu0 = EmpiricalMeasure(mu0)
    p0 = mu0.to_array(M)
    if t == 0:
        return QsdVector(weights=p0, x=None, truncation_mass=0.0, meta={"t": 0.0, "absorbed": 0.0})

    b, d = model.rates(np.arange(1, M + 1))
    max_rate = float((b + d).max())
    n = max(16, math.ceil(t * max_rate))
    p, leak = _rk4_evolve(p0, b, d, t, n)
    while True:
        if 2 * n > max_steps:
            raise NumericalError(f"{model.name}: RK4 grids still disagree at {n} steps")
        p_fine, leak_fine = _rk4_evolve(p0, b, d, t, 2 * n)
        diff = float(np.abs(p_fine - p).sum())
        n *= 2
        p, leak = p_fine, leak_fine
        if diff <= tol:
            break
    if leak > leak_threshold:
        raise NumericalError(f"{model.name}: {leak:.3g} mass leaked above M={M}; raise M")
    p = np.clip(p, 0.0, None)
    survived = float(p.sum())
    if survived <= 0:
        raise NumericalError(f"{model.name}: no surviving mass at t={t}")
    absorbed = max(0.0, 1.0 - survived - leak)
    logger.debug(f"{model.name}: semigroup t={t} steps={n} absorbed={absorbed:.6g} leaked={leak:.3g}")
    return QsdVector(weights=p / survived, x=None, truncation_mass=leak,
                     meta={"t": float(t), "absorbed": absorbed, "steps": n})

"""Empirical measures, total-variation bias experiments and their error bars."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import bootstrap as scipy_bootstrap, linregress

from .errors import ConfigError, NumericalError
from .lyapunov import chaos_bound
from .measures import EmpiricalMeasure, tv_distance
from .model import BirthDeathModel, closed_form_qsd_available, theory_supported
from .simulate import FvRunResult, initial_positions, run_replicas
from .spectral import QsdVector, conditioned_semigroup, truncated_decay_oracle

logger = logging.getLogger(__name__)

__all__ = ["EmpiricalMeasure", "tv_distance", "mean_measure", "reference_qsd", "BiasRow",
           "BiasReport", "bias_experiment", "decay_fit", "DecayFit", "phi_time_average",
           "marginal_check"]

ESTIMATORS = ("time-average", "replica")
REFERENCES = ("closed-form", "eigenvector", "large-N")


def mean_measure(samples: Sequence[EmpiricalMeasure]) -> EmpiricalMeasure:
    """Pointwise average of measures (fixed state order, so the sum is reproducible)."""
    if not samples:
        raise ValueError("mean_measure needs at least one sample")
    frame = pd.concat([s.weights for s in samples], axis=1).fillna(0.0).sort_index()
    return EmpiricalMeasure(frame.mean(axis=1))


def _as_measure(ref: Union[QsdVector, EmpiricalMeasure]) -> EmpiricalMeasure:
    return ref if isinstance(ref, EmpiricalMeasure) else ref.to_measure()


def reference_qsd(model: BirthDeathModel, kind: str = "eigenvector", M: int = 400,
                  N0: int = 10_000, t_max: float = 200.0, seed: int = 0,
                  jobs: Optional[int] = None, N0_replicas: int = 1) -> QsdVector:
    """Reference minimal QSD for bias tables.

    ``closed-form``: geometric law (1 - b/d)(b/d)^(j-1) of linear rates.
    ``eigenvector``: left Perron vector of the M-state truncation.
    ``large-N``: mean occupation measure of ``N0_replicas`` FV runs with N0 particles.

    ``meta["tv_se"]`` is the reference's own error bar in TV: 0 for the exact kinds,
    None for a single large-N run.
    """
    if kind == "closed-form":
        if not closed_form_qsd_available(model):
            raise ConfigError(f"no closed-form QSD for {model.name}")
        q = model.param("b") / model.param("d")
        j_max = max(2, math.ceil(math.log(1e-18) / math.log(q)))
        w = (1.0 - q) * q ** np.arange(j_max)
        return QsdVector(weights=w / w.sum(), x=model.param("d") - model.param("b"),
                         truncation_mass=float(q ** j_max), meta={"reference": kind, "tv_se": 0.0})
    if kind == "eigenvector":
        lam, qsd = truncated_decay_oracle(model, M)
        return QsdVector(weights=qsd.weights, x=lam, truncation_mass=qsd.truncation_mass,
                         meta={"reference": kind, "M": M, "tv_se": 0.0})
    if kind == "large-N":
        if N0_replicas < 1:
            raise ConfigError(f"N0_replicas must be at least 1, got {N0_replicas}")
        runs = run_replicas(model, initial_positions(N0), t_max, N0_replicas, seed,
                            jobs=jobs if N0_replicas > 1 else 1)
        occ = [r.occupation for r in runs]
        mean = mean_measure(occ)
        tv_se = None
        if N0_replicas > 1:
            # spread of single runs around their mean, shrunk to the error of the mean
            tv_se = float(np.mean([tv_distance(o, mean) for o in occ]) / math.sqrt(N0_replicas - 1))
        else:
            logger.warning("large-N reference from a single run has no error bar; use N0_replicas >= 2")
        w = mean.to_array(int(mean.support.max()))
        return QsdVector(weights=w, x=None, truncation_mass=0.0,
                         meta={"reference": kind, "N0": N0, "N0_replicas": N0_replicas,
                               "t_max": t_max, "seed": seed, "tv_se": tv_se})
    raise ConfigError(f"unknown reference '{kind}'; expected one of {REFERENCES}")


@dataclass
class BiasRow:
    """One N of a bias table.

    ``tv`` is (1/2) sum |mu - rho|, in [0, 1]. ``tv_norm`` is the full l1 norm
    sum |mu - rho| = 2 * tv, the convention most published bias tables use.
    """
    N: int
    tv: float
    se: float
    replicas: int
    t_max: float
    t_burn: float
    estimator: str
    reference: str
    flagged: bool = False
    nonstationary_runs: int = 0
    rebirth_rate: float = 0.0
    reference_se: float = 0.0
    tv_norm: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.tv_norm = 2.0 * self.tv


@dataclass
class BiasReport:
    model: str
    reference: str
    theory_supported: bool
    seed: int
    rows: list[BiasRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        cols = ["N", "tv", "tv_norm", "se", "replicas", "t_max", "t_burn", "estimator", "reference",
                "flagged", "nonstationary_runs", "rebirth_rate", "reference_se"]
        return pd.DataFrame([asdict(r) for r in self.rows], columns=cols)

    def to_dict(self) -> dict:
        return {"model": self.model, "reference": self.reference,
                "theory_supported": self.theory_supported, "seed": self.seed,
                "tv_convention": "tv = sum|mu - rho| / 2, tv_norm = sum|mu - rho|",
                "rows": [asdict(r) for r in self.rows]}

    @property
    def flagged(self) -> bool:
        return any(r.flagged for r in self.rows)


def _bootstrap_tv(samples: Sequence[EmpiricalMeasure], reference: EmpiricalMeasure,
                  draws: int, seed) -> float:
    """Standard error of tv(mean of replicas, reference) by resampling replicas."""
    if len(samples) < 2 or draws < 2:
        return 0.0
    frame = pd.concat([s.weights for s in samples] + [reference.weights], axis=1).fillna(0.0).sort_index()
    W = frame.iloc[:, :-1].to_numpy().T
    ref = frame.iloc[:, -1].to_numpy()

    def statistic(idx):
        return 0.5 * np.abs(W[idx.astype(int)].mean(axis=0) - ref).sum()

    res = scipy_bootstrap((np.arange(W.shape[0]),), statistic, n_resamples=draws,
                          vectorized=False, method="percentile", rng=np.random.default_rng(seed))
    return float(res.standard_error)


def _reference_se(reference: Union[QsdVector, EmpiricalMeasure]) -> float:
    value = getattr(reference, "meta", {}).get("tv_se")
    return float(value) if value else 0.0


def _replica_sample(run: FvRunResult, estimator: str) -> EmpiricalMeasure:
    if estimator == "time-average":
        return run.occupation
    return run.snapshots[-1][1]


def bias_experiment(model: BirthDeathModel, N_list: Sequence[int], t_max: float,
                    t_burn: Optional[float], replicas: int,
                    reference: Union[QsdVector, EmpiricalMeasure], seed: int = 0,
                    jobs: Optional[int] = None, estimator: str = "time-average",
                    reference_kind: str = "eigenvector", stationarity_tv: float = 0.1,
                    bootstrap: int = 200, initial_state: int = 1) -> BiasReport:
    """Estimate ||E(X^N) - rho||_TV for each N from independent FV replicas.

    ``se`` is the bootstrap error over replicas, combined in quadrature with the
    reference's own ``tv_se`` when it has one.
    """
    N_list = list(N_list)
    if not N_list:
        raise ConfigError("N_list must not be empty")
    if any(int(N) < 2 for N in N_list):
        raise ConfigError(f"every N must be at least 2, got {N_list}")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator '{estimator}'; expected one of {ESTIMATORS}")
    ref = _as_measure(reference)
    ref_se = _reference_se(reference)
    t_burn = t_max / 5.0 if t_burn is None else t_burn
    report = BiasReport(model=model.name, reference=reference_kind,
                        theory_supported=theory_supported(model), seed=seed)
    if not report.theory_supported:
        logger.warning(f"{model.name}: FV convergence is not backed by theory for these rates")
    for N in N_list:
        N = int(N)
        observe = (t_max,) if estimator == "replica" else ()
        runs = run_replicas(model, initial_positions(N, initial_state), t_max, replicas,
                            seed=[seed, N], t_burn=t_burn, observe=observe, jobs=jobs,
                            stationarity_tv=stationarity_tv)
        samples = [_replica_sample(r, estimator) for r in runs]
        tv = tv_distance(mean_measure(samples), ref)
        se = math.hypot(_bootstrap_tv(samples, ref, bootstrap, [seed, N, 1]), ref_se)
        bad = sum(not r.stationary for r in runs)
        row = BiasRow(N=N, tv=tv, se=se, replicas=replicas, t_max=t_max, t_burn=t_burn,
                      estimator=estimator, reference=reference_kind, flagged=bad > 0,
                      nonstationary_runs=bad,
                      rebirth_rate=float(np.mean([r.rebirth_rate for r in runs])),
                      reference_se=ref_se)
        if row.flagged:
            logger.warning(f"{model.name} N={N}: {bad}/{replicas} runs failed the stationarity check")
        logger.info(f"{model.name} N={N}: tv={tv:.4g} se={se:.2g}")
        report.rows.append(row)
    return report


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    slope_se: float

    def __iter__(self):
        return iter((self.slope, self.intercept))


def decay_fit(report: Union[BiasReport, Iterable[tuple[float, float]]]) -> DecayFit:
    """Least-squares line through (log N, log TV)."""
    if isinstance(report, BiasReport):
        pairs = [(r.N, r.tv) for r in report.rows]
    else:
        pairs = list(report)
    pairs = [(n, tv) for n, tv in pairs if tv > 0]
    if len(pairs) < 2:
        raise NumericalError("decay_fit needs at least two rows with positive TV")
    x = np.log([p[0] for p in pairs])
    if np.ptp(x) == 0:
        raise NumericalError("decay_fit is degenerate: all rows share the same N")
    y = np.log([p[1] for p in pairs])
    fit = linregress(x, y)
    return DecayFit(slope=float(fit.slope), intercept=float(fit.intercept), slope_se=float(fit.stderr))


def phi_time_average(runs: Sequence[FvRunResult], phi: Callable[[np.ndarray], np.ndarray]):
    """Mean and standard error over replicas of the time-averaged mu^N(phi)."""
    values = np.array([r.occupation.phi_moment(phi) for r in runs])
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), se


def marginal_check(model: BirthDeathModel, N: int, x0: int, t: float, states: Iterable[int],
                   replicas: int, seed: int, M: int = 200, jobs: Optional[int] = None) -> dict:
    """Compare the replica mean of mu^N_t(1_A) with the conditioned law at time t."""
    states = list(states)
    runs = run_replicas(model, initial_positions(N, x0), t, replicas, seed, t_burn=0.0,
                        observe=(t,), jobs=jobs)
    values = np.array([r.snapshots[-1][1].mass(states) for r in runs])
    oracle = conditioned_semigroup(model, EmpiricalMeasure.point(x0), t, M).to_measure().mass(states)
    mc_se = float(values.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    bound = chaos_bound(model.d1, t, N)
    diff = abs(float(values.mean()) - oracle)
    return {"fv_mean": float(values.mean()), "mc_se": mc_se, "oracle": oracle,
            "diff": diff, "bound": bound, "ok": diff <= bound + 3 * mc_se}

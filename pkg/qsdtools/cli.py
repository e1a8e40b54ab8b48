"""Command-line entry point: ``python -m qsdtools <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .env_loader import (configure_logging, env_float, env_int, get_config,
                         load_experiment_config)
from .errors import ConfigError, DiagnosticError, QsdError
from .estimate import (bias_experiment, decay_fit, mean_measure, reference_qsd)
from .export import ExportManager
from .lyapunov import builtin_phi, check_lyapunov, fit_certificate, min_particles
from .measures import EmpiricalMeasure
from .model import BirthDeathModel, absorption_verdict, model_from_config
from .rng import RandomStream, replica_streams
from .simulate import fv_run, initial_positions, run_replicas
from .spectral import (conditioned_semigroup, q_profile, qsd_family, s_diagnostic,
                       truncated_decay_oracle, xi1)

logger = logging.getLogger(__name__)

ORACLE_AGREEMENT = 1e-4

# command -> built-in defaults; None means "required or derived"
COMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "xi1": {"n_trunc": 2000, "tol": 1e-8, "M": 2000, "k_max": 30},
    "qsd": {"x": None, "j_max": 50, "n_trunc": 2000, "tol": 1e-8, "truncation_mass": None},
    "fv": {"N": 100, "x0": 1, "t_max": 100.0, "t_burn": None, "observe": [], "replicas": 1,
           "events": False, "stationarity_tv": None},
    "bias-table": {"N_list": None, "t_max": 500.0, "t_burn": None, "replicas": 20,
                   "estimator": "time-average", "reference": "eigenvector", "M": 400,
                   "N0": 10_000, "N0_replicas": 1, "reference_t_max": 200.0, "bootstrap": 200,
                   "stationarity_tv": None},
    "lyapunov": {"phi": "sqrt-ratio-power", "lambda1": None, "C": None, "i_max": 200,
                 "phi_values": None, "phi_b": None, "phi_d": None},
    "semigroup": {"x0": 1, "t": 1.0, "M": 200, "tol": 1e-10},
}

POSITIVE = {"n_trunc", "tol", "M", "k_max", "j_max", "N", "x0", "t_max", "replicas", "i_max",
            "N0", "N0_replicas", "reference_t_max", "lambda1", "x", "truncation_mass", "stationarity_tv"}
NONNEGATIVE = {"t_burn", "t", "C", "bootstrap"}
MODEL_FLAGS = ("family", "b", "d", "a", "c", "b1", "d1", "table_file", "tail")


@dataclass
class RunConfig:
    command: str
    model: BirthDeathModel
    params: dict[str, Any]
    seed: int
    jobs: Optional[int]
    out_dir: Optional[Path]
    strict: bool
    deterministic: bool
    resolved: dict[str, Any] = field(default_factory=dict)

    def exporter(self) -> Optional[ExportManager]:
        if self.out_dir is None:
            return None
        meta = {"version": __version__, "command": self.command, "seed": self.seed,
                "config": self.resolved}
        return ExportManager(self.out_dir, meta, stamp=not self.deterministic)


def _check_values(params: dict[str, Any]) -> None:
    for key, value in params.items():
        if value is None or isinstance(value, (bool, str, list)):
            continue
        if key in POSITIVE and value <= 0:
            raise ConfigError(f"{key} must be positive")
        if key in NONNEGATIVE and value < 0:
            raise ConfigError(f"{key} must be nonnegative")
    for N in params.get("N_list") or []:
        if int(N) < 2:
            raise ConfigError(f"every N in N_list must be at least 2, got {N}")
    if params.get("N") is not None and params["N"] < 2:
        raise ConfigError("N must be at least 2")


def resolve(args: argparse.Namespace, env: dict) -> RunConfig:
    """Merge defaults < environment < config-file section < flags."""
    command = args.command
    sections = load_experiment_config(args.config) if args.config else {}
    base_dir = Path(args.config).parent if args.config else Path.cwd()
    section = dict(sections.get(command, {}))

    model_cfg = dict(sections.get("model", {}))
    for key in MODEL_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            model_cfg[key] = value
    if "table_file" in model_cfg and "family" not in model_cfg:
        model_cfg["family"] = "table"
    if args.table_file is not None:
        base_dir = Path.cwd()
    model = model_from_config(model_cfg, base_dir)

    params = dict(COMMAND_DEFAULTS[command])
    if "stationarity_tv" in params:
        params["stationarity_tv"] = env_float(env, "QSD_STATIONARITY_TV")
    if "truncation_mass" in params:
        params["truncation_mass"] = env_float(env, "QSD_TRUNCATION_MASS")
    seed = env_int(env, "QSD_SEED")
    jobs = env_int(env, "QSD_JOBS")
    seed = section.pop("seed", seed)
    jobs = section.pop("jobs", jobs)
    params.update(section)
    for key in COMMAND_DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if args.seed is not None:
        seed = args.seed
    if args.jobs is not None:
        jobs = args.jobs
    if seed is None:
        # recorded in every artifact, so an unseeded run can still be replayed
        seed = 0 if args.deterministic else int(RandomStream().entropy % (1 << 63))
    if jobs is not None and jobs < 1:
        raise ConfigError("jobs must be positive")
    _check_values(params)

    out_dir = Path(args.out) if args.out else None
    resolved = {"model": {k: v for k, v in model_cfg.items()}, command: dict(params),
                "seed": seed, "jobs": jobs}
    return RunConfig(command=command, model=model, params=params, seed=int(seed), jobs=jobs,
                     out_dir=out_dir, strict=args.strict, deterministic=args.deterministic,
                     resolved=resolved)


def _report(run: RunConfig, stem: str, frame, payload: dict) -> None:
    exporter = run.exporter()
    if exporter is None:
        return
    for path in exporter.export_report(stem, frame, payload):
        print(f"Wrote {path}")


def cmd_xi1(run: RunConfig) -> int:
    p = run.params
    res = xi1(run.model, p["n_trunc"], p["tol"], k_max=p["k_max"])
    lam, _ = truncated_decay_oracle(run.model, p["M"])
    delta = abs(res.xi1 - lam)
    s = s_diagnostic(run.model, min(p["n_trunc"], 5000))
    # the top of the range sits next to a zero of Q_{n_trunc}
    prof = q_profile(run.model, res.xi1, max(2, res.n_trunc // 2))
    print(f"model        {run.model.name}")
    print(f"xi1          {res.xi1:.10g}   bracket [{res.lo:.10g}, {res.hi:.10g}]  n_trunc={res.n_trunc}")
    print(f"oracle       {lam:.10g}   M={p['M']}")
    print(f"delta        {delta:.3g}")
    print(f"absorption   {absorption_verdict(run.model)}")
    print(f"S partial    {s.partial_sum:.6g} ({s.trend})")
    print(f"Q min        {prof.min_q:.10g} at i={prof.argmin} over 1..{len(prof.log_q)}"
          + ("" if prof.min_is_one() else "   (expected 1)"))
    _report(run, "xi1", res.to_frame(),
            {"result": res.to_dict(), "oracle": lam, "delta": delta,
             "s_partial": s.partial_sum, "s_trend": s.trend, "q_profile": prof.to_dict()})
    if run.strict and delta > ORACLE_AGREEMENT:
        raise DiagnosticError(f"xi1 and the truncated oracle differ by {delta:.3g} (> {ORACLE_AGREEMENT:g})")
    return 0


def cmd_qsd(run: RunConfig) -> int:
    p = run.params
    x = p["x"]
    if x is None:
        x = xi1(run.model, p["n_trunc"], p["tol"]).xi1
    qsd = qsd_family(run.model, x, p["j_max"], truncation_threshold=p["truncation_mass"])
    print(f"model        {run.model.name}")
    print(f"x            {x:.10g}")
    print(f"tail mass    {qsd.truncation_mass:.3g} beyond j={p['j_max']}")
    for j, w in zip(qsd.states[:10], qsd.weights[:10]):
        print(f"  rho({j}) = {w:.6e}")
    _report(run, "qsd", qsd.to_frame(), {"qsd": qsd.to_dict()})
    return 0


def cmd_fv(run: RunConfig) -> int:
    p = run.params
    runs = run_replicas(run.model, initial_positions(p["N"], p["x0"]), p["t_max"], p["replicas"],
                        run.seed, t_burn=p["t_burn"], observe=p["observe"], jobs=run.jobs,
                        stationarity_tv=p["stationarity_tv"])
    logged = None
    if p["events"]:
        # replays replica 0 on its own stream with the event log switched on
        logged = fv_run(run.model, initial_positions(p["N"], p["x0"]), p["t_max"],
                        observe=p["observe"], rng=replica_streams(run.seed, p["replicas"])[0],
                        t_burn=p["t_burn"], stationarity_tv=p["stationarity_tv"], record_events=True)
    occupation = mean_measure([r.occupation for r in runs])
    bad = sum(not r.stationary for r in runs)
    print(f"model        {run.model.name}   N={p['N']}  replicas={p['replicas']}  t_max={p['t_max']}")
    print(f"rebirths     {np.mean([r.rebirth_rate for r in runs]):.4g} per unit time (bound N d1 = {p['N'] * run.model.d1:g})")
    print(f"events       {sum(r.event_count for r in runs)}")
    print(f"stationary   {len(runs) - bad}/{len(runs)} runs")
    print(f"occupation   {occupation!r}")
    exporter = run.exporter()
    if exporter is not None:
        paths = [exporter.export_measure(occupation, "fv_occupation.csv")]
        if p["observe"]:
            paths.append(exporter.export_snapshots(runs[0].snapshots, "fv_snapshots.csv"))
        if logged is not None:
            paths.append(exporter.export_events(logged.events, "fv_events.csv"))
        paths.append(exporter.write_json({"runs": [
            {"replica": k, "rebirth_count": r.rebirth_count, "event_count": r.event_count,
             "stationarity_tv": r.stationarity_tv, "stationary": r.stationary}
            for k, r in enumerate(runs)]}, "fv_runs.json"))
        for path in paths:
            print(f"Wrote {path}")
    if run.strict and bad:
        raise DiagnosticError(f"{bad} of {len(runs)} runs failed the stationarity check")
    return 0


def cmd_bias_table(run: RunConfig) -> int:
    p = run.params
    if not p["N_list"]:
        raise ConfigError("N_list must not be empty")
    reference = reference_qsd(run.model, p["reference"], M=p["M"], N0=p["N0"],
                              t_max=p["reference_t_max"], seed=run.seed, jobs=run.jobs,
                              N0_replicas=p["N0_replicas"])
    report = bias_experiment(run.model, p["N_list"], p["t_max"], p["t_burn"], p["replicas"],
                             reference, seed=run.seed, jobs=run.jobs, estimator=p["estimator"],
                             reference_kind=p["reference"], stationarity_tv=p["stationarity_tv"],
                             bootstrap=p["bootstrap"])
    frame = report.to_frame()
    print(f"model        {run.model.name}   reference={p['reference']}   estimator={p['estimator']}")
    if not report.theory_supported:
        print("note         convergence for this model is unsupported by theory")
    print(frame[["N", "tv", "tv_norm", "se", "replicas", "flagged"]].to_string(index=False))
    payload = report.to_dict()
    if len(report.rows) >= 2:
        try:
            fit = decay_fit(report)
            print(f"slope        {fit.slope:.3f} +/- {fit.slope_se:.3f}")
            payload["decay_fit"] = {"slope": fit.slope, "intercept": fit.intercept, "slope_se": fit.slope_se}
        except QsdError as e:
            logger.warning(f"decay fit skipped: {e}")
    _report(run, "bias_table", frame, payload)
    if run.strict and report.flagged:
        raise DiagnosticError("bias table has rows flagged by the stationarity check")
    return 0


def cmd_lyapunov(run: RunConfig) -> int:
    p = run.params
    if p["lambda1"] is None:
        raise ConfigError("lambda1 is required for the lyapunov command")
    extra = {}
    if p["phi_values"] is not None:
        extra["values"] = p["phi_values"]
    if p["phi_b"] is not None and p["phi_d"] is not None:
        extra.update(b=p["phi_b"], d=p["phi_d"])
    phi = builtin_phi(p["phi"], run.model, **extra)
    if p["C"] is None:
        cert = fit_certificate(run.model, phi, p["lambda1"], p["i_max"])
    else:
        cert = check_lyapunov(run.model, phi, p["lambda1"], p["C"], p["i_max"])
    print(f"model        {run.model.name}   phi={p['phi']}")
    print(f"lambda1      {cert.lambda1:g}   C={cert.C:.6g}   range 1..{p['i_max']}")
    print(f"valid        {cert.valid}   margin={cert.margin:.6g}" +
          (f"   fails at i={cert.witness}" if cert.witness is not None else ""))
    print(f"H1           {cert.h1}")
    if cert.h1:
        print(f"N threshold  N >= {min_particles(cert.lambda1, run.model.d1)}")
    for note in cert.notes:
        print(f"note         {note}")
    _report(run, "lyapunov", None, {"certificate": cert.to_dict()})
    if run.strict and not cert.valid:
        raise DiagnosticError(f"drift inequality fails at i={cert.witness}")
    return 0


def cmd_semigroup(run: RunConfig) -> int:
    p = run.params
    law = conditioned_semigroup(run.model, EmpiricalMeasure.point(p["x0"]), p["t"], p["M"], tol=p["tol"])
    print(f"model        {run.model.name}   x0={p['x0']}  t={p['t']}  M={p['M']}")
    print(f"absorbed     {law.meta.get('absorbed', 0.0):.6g}")
    for j, w in zip(law.states[:10], law.weights[:10]):
        print(f"  P(X_t = {j} | T0 > t) = {w:.6e}")
    _report(run, "semigroup", law.to_frame(), {"law": law.to_dict()})
    return 0


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "xi1": cmd_xi1,
    "qsd": cmd_qsd,
    "fv": cmd_fv,
    "bias-table": cmd_bias_table,
    "lyapunov": cmd_lyapunov,
    "semigroup": cmd_semigroup,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment file with per-command sections")
    common.add_argument("--family", help="power | linear | logistic | constant_tail | pure_drift | example3 | table")
    for name in ("b", "d", "a", "c", "b1", "d1"):
        common.add_argument(f"--{name}", type=float)
    common.add_argument("--table-file", dest="table_file", help="CSV with columns i,birth,death")
    common.add_argument("--tail", choices=("error", "constant"))
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="directory for CSV/JSON artifacts")
    common.add_argument("--strict", action="store_true", help="exit 4 on failed diagnostics")
    common.add_argument("--deterministic", action="store_true",
                        help="seed 0 when unseeded and no timestamps, for bit-identical reruns")
    common.add_argument("--log-level", dest="log_level")

    ap = argparse.ArgumentParser(prog="qsdtools", description="QSD computations and Fleming-Viot experiments")
    ap.add_argument("--version", action="version", version=f"qsdtools {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("xi1", parents=[common], help="decay parameter by bisection, with oracle cross-check")
    p.add_argument("--n-trunc", dest="n_trunc", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)

    p = sub.add_parser("qsd", parents=[common], help="QSD rho_x (default x = xi1)")
    p.add_argument("--x", type=float)
    p.add_argument("--j-max", dest="j_max", type=int)
    p.add_argument("--n-trunc", dest="n_trunc", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--truncation-mass", dest="truncation_mass", type=float)

    p = sub.add_parser("fv", parents=[common], help="Fleming-Viot particle system run(s)")
    p.add_argument("--N", type=int)
    p.add_argument("--x0", type=int)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--t-burn", dest="t_burn", type=float)
    p.add_argument("--observe", type=float, nargs="+")
    p.add_argument("--replicas", type=int)
    p.add_argument("--events", action="store_true", default=None)
    p.add_argument("--stationarity-tv", dest="stationarity_tv", type=float)

    p = sub.add_parser("bias-table", parents=[common], help="TV bias of E(X^N) against a reference QSD")
    p.add_argument("--N-list", dest="N_list", type=int, nargs="*")
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--t-burn", dest="t_burn", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--estimator", choices=("time-average", "replica"))
    p.add_argument("--reference-mode", dest="reference", choices=("closed-form", "eigenvector", "large-N"))
    p.add_argument("--M", type=int)
    p.add_argument("--N0", type=int)
    p.add_argument("--N0-replicas", dest="N0_replicas", type=int)
    p.add_argument("--reference-t-max", dest="reference_t_max", type=float)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--stationarity-tv", dest="stationarity_tv", type=float)

    p = sub.add_parser("lyapunov", parents=[common], help="check a drift certificate L phi <= -lambda1 phi + C")
    p.add_argument("--phi", choices=("sqrt-ratio-power", "two-power", "table"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--C", type=float, help="omit to fit the smallest C on the range")
    p.add_argument("--i-max", dest="i_max", type=int)
    p.add_argument("--phi-values", dest="phi_values", type=float, nargs="+")
    p.add_argument("--phi-b", dest="phi_b", type=float)
    p.add_argument("--phi-d", dest="phi_d", type=float)

    p = sub.add_parser("semigroup", parents=[common], help="law of X_t given survival from a point mass")
    p.add_argument("--x0", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--tol", type=float)
    return ap


def main(argv: Optional[list[str]] = None, base_dir: Optional[Path] = None) -> int:
    args = build_parser().parse_args(argv)
    env = get_config(base_dir or Path.cwd())
    try:
        configure_logging(args.log_level or env["QSD_LOG_LEVEL"])
        run = resolve(args, env)
        return COMMANDS[args.command](run)
    except QsdError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())

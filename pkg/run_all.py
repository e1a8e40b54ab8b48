from __future__ import annotations
import json
from pathlib import Path
from typing import Optional

from qsdtools import __version__
from qsdtools.env_loader import configure_logging, env_float, env_int, get_config, parse_sections
from qsdtools.errors import QsdError
from qsdtools.estimate import bias_experiment, decay_fit, reference_qsd
from qsdtools.export import ExportManager
from qsdtools.model import model_from_config
from qsdtools.spectral import truncated_decay_oracle, xi1
from qsdtools.validate import validate

QUICK = {"N_list": [2, 10], "t_max": 50.0, "t_burn": 10.0, "replicas": 4, "bootstrap": 50, "M": 200}


def run_all(base_dir: Path,
            experiments_path: Optional[Path] = None,
            out_dir: Optional[Path] = None,
            seed: Optional[int] = None,
            jobs: Optional[int] = None,
            quick: bool = False) -> dict:
    data_dir = base_dir / "data"
    env = get_config(base_dir)
    configure_logging(env["QSD_LOG_LEVEL"])
    experiments_path = experiments_path or data_dir / "experiments.json"
    out_dir = Path(out_dir or base_dir / env["QSD_OUT_DIR"])
    seed = seed if seed is not None else (env_int(env, "QSD_SEED") or 0)
    jobs = jobs if jobs is not None else env_int(env, "QSD_JOBS")
    out = {"steps": [], "experiments": {}}
    try:
        raw = json.loads(Path(experiments_path).read_text())
        experiments = {name: parse_sections(body, f"{experiments_path.name}:{name}")
                       for name, body in raw.items() if name not in ("version", "description")}
    except (OSError, ValueError, QsdError) as e:
        out["steps"].append(f"Experiments failed to load: {e}")
        return out

    for name, sections in experiments.items():
        try:
            model = model_from_config(sections.get("model", {}), experiments_path.parent)
            report = validate(model)
            out["steps"].append(f"{name}: {report.summary()}")
            if not report.ok:
                continue
        except QsdError as e:
            out["steps"].append(f"{name}: model failed: {e}")
            continue

        exporter = ExportManager(out_dir / name, {"version": __version__, "experiment": name,
                                                  "seed": seed, "config": sections})
        params = dict(sections.get("bias-table", {}))
        if quick:
            params.update(QUICK)
        M = int(params.get("M", 400))
        try:
            res = xi1(model, M + 1)
            lam, _ = truncated_decay_oracle(model, M)
            out["steps"].append(f"{name}: xi1 {res.xi1:.8g} (oracle {lam:.8g}, M={M})")
            exporter.export_report("xi1", res.to_frame(), {"result": res.to_dict(), "oracle": lam})
        except QsdError as e:
            out["steps"].append(f"{name}: spectral step failed: {e}")
            continue

        if not params.get("N_list"):
            continue
        params.setdefault("stationarity_tv", env_float(env, "QSD_STATIONARITY_TV"))
        try:
            kind = params.get("reference", "eigenvector")
            reference = reference_qsd(model, kind, M=M, N0=int(params.get("N0", 10_000)),
                                      t_max=float(params.get("reference_t_max", 200.0)),
                                      seed=seed, jobs=jobs,
                                      N0_replicas=int(params.get("N0_replicas", 1)))
            bias = bias_experiment(model, params["N_list"], float(params.get("t_max", 500.0)),
                                   params.get("t_burn"), int(params.get("replicas", 20)), reference,
                                   seed=seed, jobs=jobs,
                                   estimator=params.get("estimator", "time-average"),
                                   reference_kind=kind,
                                   stationarity_tv=float(params["stationarity_tv"]),
                                   bootstrap=int(params.get("bootstrap", 200)))
            payload = bias.to_dict()
            fit = decay_fit(bias) if len(bias.rows) >= 2 else None
            if fit is not None:
                payload["decay_fit"] = {"slope": fit.slope, "intercept": fit.intercept,
                                        "slope_se": fit.slope_se}
            exporter.export_report("bias_table", bias.to_frame(), payload)
            slope = f", slope {fit.slope:.3f}" if fit is not None else ""
            out["steps"].append(f"{name}: bias table → bias_table.csv ({len(bias.rows)} rows{slope})")
            out["experiments"][name] = bias
        except QsdError as e:
            out["steps"].append(f"{name}: bias table failed: {e}")
    out["written"] = [str(p) for p in sorted(out_dir.rglob("*")) if p.is_file()] if out_dir.exists() else []
    return out

if __name__ == "__main__":
    import argparse
    p = argparse.ArgumentParser(description="Run validation → xi1 vs oracle → bias tables for every experiment")
    p.add_argument("--experiments", default="")
    p.add_argument("--out", default="")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--quick", action="store_true", help="short runs for a smoke test")
    args = p.parse_args()
    base_dir = Path(__file__).resolve().parent
    exp = Path(args.experiments) if args.experiments else None
    res = run_all(base_dir, exp, Path(args.out) if args.out else None, args.seed, args.jobs,
                  quick=args.quick)
    print("\n".join(res.get("steps", [])))

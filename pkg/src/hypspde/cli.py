"""Command line entry point ``hypspde``.

Subcommands
-----------
simulate      simulate mode paths and write paths, measurements and a summary
estimate      estimate ``(theta, eta)`` from one simulated replicate
mc-study      Monte-Carlo rate study with CSV, TXT and SVG reports
oracle-check  scaling-limit and Fisher-limit convergence tables
rates         fit log-log slopes to an existing cells CSV
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .estimator import write_report_txt, report_csv_row
from .experiments import StudyConfig, emit_report, fit_rate, run_mc_study, study_config_from_mapping, theoretical_slopes
from .kernels import KernelProfile, min_modes
from .measurements import extract_measurements, make_placement, write_measurements_csv
from .model import ModelSpec, model_from_mapping, preset, tomllib, validate_parameters
from .oracle import fisher_limit_check, scaling_limit_check
from .spectral import INTEGRATORS, TimeGrid, simulate_euler, simulate_exact, write_paths_binary, write_paths_csv
from .stream import ReplicateDesign, estimate_replicate

log = logging.getLogger("hypspde")


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise SystemExit(f"cannot read config {path}: {exc}") from exc


def _model(args, cfg: dict) -> ModelSpec:
    if args.preset:
        return preset(args.preset)
    if cfg.get("model") or cfg.get("preset"):
        return model_from_mapping(cfg)
    return preset("plate_structural")


def _section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name, {}))


def _pick(cli_value, table: dict, key: str, default):
    if cli_value is not None:
        return cli_value
    return table.get(key, default)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, cfg) -> int:
    spec = _model(args, cfg)
    sec = _section(cfg, "simulate")
    delta = float(_pick(args.delta, sec, "delta", 0.1))
    n_steps = int(_pick(args.n_steps, sec, "n_steps", 1000))
    K = int(_pick(args.K_max, sec, "K_max", min_modes(delta, spec.domain_length)))
    N = int(_pick(args.N, sec, "N", 1))
    seed = int(_pick(args.seed, sec, "seed", 0))
    integrator = _pick(args.integrator, sec, "integrator", "exact")
    grid = TimeGrid(spec.horizon, n_steps)
    sim = simulate_exact if integrator == "exact" else simulate_euler
    paths = sim(spec, K, grid, seed)
    out = _out(args)
    write_paths_binary(paths, out / "paths.bin")
    write_paths_csv(paths, out / "paths.csv")
    profile = KernelProfile()
    pl = make_placement(N, delta, spec.domain_length)
    ms = extract_measurements(paths, pl, profile, spec)
    write_measurements_csv(ms, out, stem="measurements")
    lines = [
        f"model = {spec.name or 'custom'}",
        f"integrator = {integrator}",
        f"seed = {seed}",
        f"K_max = {K}",
        f"n_steps = {n_steps}",
        f"h = {grid.h:.12g}",
        f"delta = {delta:.12g}",
        f"locations = {[round(x, 12) for x in pl.locations]}",
    ]
    (out / "simulate_summary.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_estimate(args, cfg) -> int:
    spec = _model(args, cfg)
    report = validate_parameters(spec)
    if not report.ok:
        raise SystemExit(report.summary())
    sec = _section(cfg, "estimate")
    delta = float(_pick(args.delta, sec, "delta", 0.05))
    N = int(_pick(args.N, sec, "N", int(np.ceil(0.5 / delta - 1e-9))))
    c_h = float(_pick(args.c_h, sec, "c_h", 0.0125))
    seed = int(_pick(args.seed, sec, "seed", 0))
    integrator = _pick(args.integrator, sec, "integrator", "exact")
    drift_rule = sec.get("drift_rule", "hermite")
    profile = KernelProfile()
    pl = make_placement(N, delta, spec.domain_length, support_tol=1e-10)
    design = ReplicateDesign.from_step_rule(spec, pl, c_h, integrator=integrator, drift_rule=drift_rule)
    rep = estimate_replicate(design, profile, seed, (0,), truth=spec.params)
    out = _out(args)
    write_report_txt(rep, out / "estimate.txt")
    header, values = report_csv_row(rep)
    with open(out / "estimate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerow(values)
    print(f"theta_hat = {rep.theta_hat.tolist()}, eta_hat = {rep.eta_hat.tolist()}")
    return 0


def cmd_mc_study(args, cfg) -> int:
    data = dict(cfg)
    if args.preset:
        data["preset"] = args.preset
        data.pop("model", None)
    overrides = dict(
        seed=args.seed,
        integrator=args.integrator,
        threads=args.threads,
        replicates=args.replicates,
        deltas=tuple(args.deltas) if args.deltas else None,
        c_h=args.c_h,
    )
    config: StudyConfig = study_config_from_mapping(data, **overrides)
    res = run_mc_study(config)
    files = emit_report(res, _out(args))
    for j, n in enumerate(res.names):
        print(f"{n}: slope {res.slopes()[j]:.4g} (theory {theoretical_slopes(config.spec, config.N_fixed)[j]:.4g})")
    print("wrote " + ", ".join(str(p) for p in files.values()))
    return 0


def cmd_oracle_check(args, cfg) -> int:
    spec = _model(args, cfg)
    sec = _section(cfg, "oracle")
    deltas = args.deltas or sec.get("deltas", [0.2, 0.1, 0.05, 0.025])
    t = sec.get("t")
    profile = KernelProfile()
    out = _out(args)
    fisher = fisher_limit_check(spec, profile, deltas)
    scaling = scaling_limit_check(spec, None, deltas, t=t)
    fisher.write_csv(out / "fisher_limits.csv")
    scaling.write_csv(out / "scaling_limits.csv")
    lines = []
    for name, tab in (("fisher", fisher), ("scaling", scaling)):
        for q in tab.quantities():
            errs = tab.errors(q)
            lines.append(f"{name} {q}: errors {[float(f'{e:.4g}') for e in errs]} decreasing = {tab.decreasing(q)}")
    (out / "oracle_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_rates(args, cfg) -> int:
    if not args.input:
        raise SystemExit("rates needs --input <cells.csv> from mc-study")
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise SystemExit(f"{args.input} has no rows")
    deltas = [float(r["delta"]) for r in rows]
    params = [k[: -len("_rmse")] for k in rows[0] if k.endswith("_rmse")]
    lines = []
    for p in params:
        slope, icpt, resid = fit_rate(deltas, [float(r[f"{p}_rmse"]) for r in rows])
        lines.append(f"{p}: slope = {slope:.12g}, intercept = {icpt:.12g}, residual = {resid:.12g}")
    out = _out(args)
    (out / "rates.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypspde", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [model] and per-command tables")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default="hypspde-out", help="output directory")
    common.add_argument("--integrator", choices=INTEGRATORS, help="time integrator")
    common.add_argument("--threads", type=int, help="worker threads for replicates")
    common.add_argument("--preset", help="model preset (wave_weak, plate_weak, plate_structural)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate mode paths")
    p.add_argument("--delta", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--K-max", dest="K_max", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="estimate from one replicate")
    p.add_argument("--delta", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--c-h", dest="c_h", type=float, help="time step factor, h <= c_h delta^2")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mc-study", parents=[common], help="Monte-Carlo rate study")
    p.add_argument("--deltas", type=float, nargs="+")
    p.add_argument("--replicates", type=int)
    p.add_argument("--c-h", dest="c_h", type=float)
    p.set_defaults(func=cmd_mc_study)

    p = sub.add_parser("oracle-check", parents=[common], help="analytic convergence tables")
    p.add_argument("--deltas", type=float, nargs="+")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("rates", parents=[common], help="fit slopes to a cells CSV")
    p.add_argument("--input", help="cells CSV written by mc-study")
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not (0 <= args.seed < 2**64):
        raise SystemExit("--seed must be an unsigned 64-bit integer")
    cfg = _load_config(args.config)
    try:
        return args.func(args, cfg)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"hypspde {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

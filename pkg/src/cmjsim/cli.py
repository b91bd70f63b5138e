"""Command-line entry point.

Subcommands: ``spectral``, ``simulate``, ``lln``, ``clt``, ``fringe``,
``martingales``.  Every command reads one TOML experiment file, writes
its reports into the output directory and exits 0 on success.  Exit
codes: 1 usage/configuration error, 2 violated model assumption
(named), 3 unsupported regime (boundary roots, degenerate variance),
4 resource cap.  Statistical pass/fail verdicts live in the report
files, not in the exit code.

Outputs are idempotent: re-running a command overwrites byte-identical
files (no timestamps; floats carry 17 significant digits).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import CmjError
from .genealogy import TimeHorizon, WeightThreshold, dump_csv, simulate
from .harness import (
    run_clt,
    run_fringe_census,
    run_lln,
    run_martingale_suite,
    write_json,
    write_replicas_csv,
    write_rows_csv,
    write_sigma_points_csv,
)
from .renewal import make_kernel, sigma_squared
from .spectral import analyze


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmj",
        description="Branching-process simulation and verification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("spectral", "simulate", "lln", "clt", "fringe", "martingales"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--threads", type=int, default=None, help="worker count")
        p.add_argument("--out", default=None, help="override output directory")
        if name == "clt":
            p.add_argument(
                "--inject-aalpha-bias",
                type=float,
                default=0.0,
                help="relative bias on the growth constant (negative control)",
            )
    return parser


def _load(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = _replace(cfg, master_seed=args.seed)
    if args.threads is not None:
        cfg = _replace(cfg, threads=args.threads)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _replace(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, **kwargs)


def cmd_spectral(args) -> int:
    cfg, out = _load(args)
    solution = analyze(
        cfg.law, tol=cfg.tolerances.root_tol, im_max=cfg.tolerances.im_max
    )
    write_json(solution.to_report(), out / "spectral.json")
    print(json.dumps(solution.to_report(), sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    cfg, out = _load(args)
    if cfg.simulate_count is not None:
        stop = WeightThreshold(cfg.simulate_count)
    elif cfg.simulate_time is not None:
        stop = TimeHorizon(cfg.simulate_time)
    else:
        stop = TimeHorizon(cfg.horizons[-1])
    pop = simulate(cfg.law, stop, cfg.master_seed, node_cap=cfg.node_cap)
    with open(out / "population.csv", "w", newline="") as fh:
        dump_csv(pop, fh)
    print(f"{len(pop)} nodes, horizon {pop.horizon:.17g}")
    return 0


def cmd_lln(args) -> int:
    cfg, out = _load(args)
    solution = analyze(cfg.law, tol=cfg.tolerances.root_tol, im_max=cfg.tolerances.im_max)
    kernel = make_kernel(cfg.law, solution)
    char = cfg.make_characteristic(solution.alpha)
    rows = run_lln(
        cfg.law,
        char,
        solution,
        kernel,
        horizons=cfg.horizons,
        n_replicas=cfg.replicas,
        master_seed=cfg.master_seed,
        threads=cfg.threads,
    )
    write_rows_csv(
        rows, ["t", "mc_mean", "mc_se", "predicted", "predicted_limit", "z_score"],
        out / "lln.csv",
    )
    passed = all(abs(r.z_score) <= 4.0 for r in rows)
    write_json(
        {
            "passed": passed,
            "max_abs_z": max(abs(r.z_score) for r in rows),
            "characteristic": char.name,
        },
        out / "report.json",
    )
    print(f"lln {'pass' if passed else 'FAIL'}")
    return 0


def cmd_clt(args) -> int:
    cfg, out = _load(args)
    solution = analyze(cfg.law, tol=cfg.tolerances.root_tol, im_max=cfg.tolerances.im_max)
    kernel = make_kernel(cfg.law, solution)
    char = cfg.make_characteristic(solution.alpha)
    if cfg.clt_t is None:
        raise CmjError("clt needs experiment.clt_t in the config")
    t = cfg.clt_t
    t_big = (
        cfg.clt_t_big
        if cfg.clt_t_big is not None
        else t + cfg.tolerances.resolved_delta_w(solution.alpha)
    )
    sigma = sigma_squared(
        cfg.law,
        char,
        solution,
        kernel,
        budget=cfg.tolerances.sigma_budget,
        seed=cfg.master_seed,
        s_min=cfg.tolerances.sigma_smin,
        rel_tail_tol=cfg.tolerances.rel_tail_tol,
        nested_m=cfg.tolerances.nested_mc_m,
    )
    report, records = run_clt(
        cfg.law,
        char,
        solution,
        sigma,
        t=t,
        t_big=t_big,
        n_replicas=cfg.replicas,
        master_seed=cfg.master_seed,
        a_alpha_bias=args.inject_aalpha_bias,
        threads=cfg.threads,
    )
    write_replicas_csv(records, out / "replicas.csv")
    write_sigma_points_csv(sigma, out / "sigma_points.csv")
    doc = report.to_json()
    doc["truncation_error_bound"] = sigma.truncation_error_bound
    doc["sigma_grid"] = {
        "s_min": sigma.points[0][0],
        "s_max": sigma.points[-1][0],
        "n_points": len(sigma.points),
    }
    doc["injected_bias"] = args.inject_aalpha_bias
    if report.degenerate:
        doc["passed"] = None
        write_json(doc, out / "report.json")
        print("clt degenerate: limit variance is zero; no distributional test")
        return 3
    doc["passed"] = report.ks_p_value > 0.01
    write_json(doc, out / "report.json")
    print(
        f"clt {'pass' if doc['passed'] else 'FAIL'}: "
        f"ks_p={report.ks_p_value:.3g} sigma2_ratio={report.sigma2_ratio:.3f}"
    )
    return 0


def cmd_fringe(args) -> int:
    cfg, out = _load(args)
    solution = analyze(cfg.law, tol=cfg.tolerances.root_tol, im_max=cfg.tolerances.im_max)
    kernel = make_kernel(cfg.law, solution)
    from .characteristics import FringeCharacteristic, FringePattern

    chars = [
        FringeCharacteristic(FringePattern.parse(p), cfg.law) for p in cfg.patterns
    ]
    rows = run_fringe_census(
        cfg.law,
        chars,
        solution,
        kernel,
        t=cfg.horizons[-1],
        n_replicas=cfg.replicas,
        master_seed=cfg.master_seed,
        threads=cfg.threads,
    )
    write_rows_csv(
        rows,
        ["pattern", "mean_fraction", "se", "predicted_fraction", "z_score"],
        out / "fringe.csv",
    )
    passed = all(abs(r.z_score) <= 4.0 for r in rows)
    write_json(
        {
            "passed": passed,
            "predictions": {r.pattern: r.predicted_fraction for r in rows},
        },
        out / "report.json",
    )
    print(f"fringe {'pass' if passed else 'FAIL'}")
    return 0


def cmd_martingales(args) -> int:
    cfg, out = _load(args)
    solution = analyze(cfg.law, tol=cfg.tolerances.root_tol, im_max=cfg.tolerances.im_max)
    suite = run_martingale_suite(
        cfg.law,
        solution,
        times=cfg.horizons,
        n_replicas=cfg.replicas,
        master_seed=cfg.master_seed,
        threads=cfg.threads,
    )
    for kind in ("w", "biggins", "complex"):
        rows = [r for r in suite.rows if r.kind == kind]
        if rows:
            write_rows_csv(
                rows,
                ["kind", "param", "index", "mean", "se", "variance", "target", "z_score", "flagged"],
                out / f"trace_{kind}.csv",
            )
    passed = not any(r.flagged for r in suite.rows)
    write_json(
        {
            "passed": passed,
            "variance_nondecreasing": suite.variance_nondecreasing,
            "skipped": list(suite.skipped),
        },
        out / "report.json",
    )
    print(f"martingales {'pass' if passed else 'FAIL'}")
    return 0


_COMMANDS = {
    "spectral": cmd_spectral,
    "simulate": cmd_simulate,
    "lln": cmd_lln,
    "clt": cmd_clt,
    "fringe": cmd_fringe,
    "martingales": cmd_martingales,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CmjError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point (``qwrbf``).

Exit codes: 0 success, 2 configuration error, 3 runtime failure (outputs
written so far are kept).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, load_config
from .harness import EXPERIMENT_INDEX, derive_seed, expand_targets
from .oracle import Oracle
from .outputs import RunWriter, write_csv, write_experiment
from .trace import read_jsonl
from .walk import param_count

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RAD_TO_DEG = 180.0 / np.pi

log = logging.getLogger("qwrbf")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment config (angles in degrees)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--noiseless", action="store_true", default=None, help="exact fidelity instead of counts")
    p.add_argument("--steps", type=int, help="walk steps")
    p.add_argument("--budget", type=int, help="evaluations per run")
    p.add_argument("--repeats", type=int, help="repeats per target")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qwrbf", description="Quantum-walk state engineering with RBF surrogates")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("engineer", "optimize each target with the surrogate optimizer"),
        ("perturb", "optimize on a drifting device with degradation checks"),
        ("sweep", "evaluations to reach the fidelity threshold versus walk steps"),
        ("compare", "surrogate optimizer against random search and Powell"),
    ]:
        _common(sub.add_parser(name, help=help_))
    ev = sub.add_parser("eval", help="score one parameter vector")
    _common(ev)
    ev.add_argument("--theta", required=True, help="comma-separated angles in degrees")
    ev.add_argument("--target", help="target string overriding the config's first target")
    rep = sub.add_parser("report", help="aggregate traces of an existing experiment directory")
    rep.add_argument("directory", type=Path)
    return parser


def _load(args) -> "harness.ExperimentConfig":
    overrides = dict(seed=args.seed, steps=args.steps, budget=args.budget, repeats=args.repeats,
                     noiseless=args.noiseless)
    if args.command in EXPERIMENT_INDEX:
        overrides["experiment"] = args.command
    if getattr(args, "target", None):
        overrides["targets"] = [args.target]
    return load_config(args.config, **overrides)


def run_experiment(cfg, out: Path) -> None:
    writer = RunWriter(out, cfg.experiment)
    tables, curves = {}, None
    status = "failed"
    try:
        if cfg.experiment == "engineer":
            results = harness.run_engineering(cfg, writer)
            curves = {"rbf": harness.engineering_curves(results, cfg.budget)}
        elif cfg.experiment == "perturb":
            results = harness.run_perturbation(cfg, writer)
            rows = [dict(run=r.label, **p) for r in results for p in r.extras["perturbations"]]
            tables["perturbations.csv"] = (rows, ["run", "evaluation", "f_before", "f_after", "ratio", "detectable",
                                                  "detected", "first_check", "restart_at"])
        elif cfg.experiment == "sweep":
            _, table = harness.run_sweep(cfg, writer)
            tables["sweep_table.csv"] = (table, ["steps", "n_par", "mean_evals", "se_evals", "reached", "capped"])
        else:
            _, curves = harness.run_comparison(cfg, writer)
        status = "ok"
    finally:
        write_experiment(out, cfg, writer, tables, curves, status)


def cmd_eval(args, cfg) -> dict:
    targets = expand_targets(cfg, cfg.steps, EXPERIMENT_INDEX["engineer"])
    try:
        theta_deg = np.array([float(v) for v in args.theta.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad --theta: {exc}") from exc
    if theta_deg.size != param_count(cfg.steps):
        raise ConfigError(f"--theta needs {param_count(cfg.steps)} angles for {cfg.steps} steps, got {theta_deg.size}")
    target = targets[0]
    oracle = Oracle(cfg.steps, target.state, harness._noise(cfg), seed=derive_seed(cfg.seed, 99, 0, 0, 1))
    theta = np.deg2rad(theta_deg)
    cost = oracle.cost(theta)
    return {"target": target.name, "theta_deg": theta_deg.tolist(), "cost": cost,
            "noisy_fidelity": 1.0 - cost, "exact_fidelity": oracle.evaluate_exact(theta)}


def cmd_report(directory: Path) -> None:
    meta_path = directory / "metadata.json"
    if not meta_path.exists():
        raise ConfigError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text())
    budget = meta["config"]["budget"]
    groups: dict[str, dict[int, list]] = {}
    for run in meta["runs"]:
        trace = read_jsonl(directory / run["file"], RAD_TO_DEG)
        if not len(trace):
            continue
        curve = harness.pad_curve(trace.best_so_far, budget)
        groups.setdefault(run["algorithm"], {}).setdefault(run["state"], []).append(curve)
    curves = {alg: harness.aggregate(g) for alg, g in sorted(groups.items())}
    rows = [{"series": a, "eval": i, "mean_cost": m, "std_cost": s}
            for a, (mean, std) in curves.items() for i, (m, s) in enumerate(zip(mean, std))]
    write_csv(directory / "report.csv", rows, ["series", "eval", "mean_cost", "std_cost"])
    for alg, (mean, std) in curves.items():
        print(f"{alg}: final mean cost {mean[-1]:.6f} +- {std[-1]:.6f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.directory)
            return EXIT_OK
        cfg = _load(args)
        if args.command == "eval":
            print(json.dumps(cmd_eval(args, cfg)))
            return EXIT_OK
        run_experiment(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure; partial outputs already on disk
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

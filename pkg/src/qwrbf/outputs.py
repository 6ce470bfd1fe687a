"""On-disk layout of an experiment directory.

::

    <out>/runs/<experiment>_<label>.jsonl         one IterationRecord per line
    <out>/runs/<experiment>_<label>.events.jsonl  hidden offsets and check audit (perturb only)
    <out>/summary.csv                             one row per run
    <out>/curves.csv                              aggregated best-so-far curves (engineer, compare)
    <out>/sweep_table.csv                         evaluations to threshold per step count (sweep)
    <out>/metadata.json                           config, config hash, seeds and versions

Nothing time-dependent is written, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import platform
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ExperimentConfig
from .harness import RunResult

RAD_TO_DEG = 180.0 / np.pi


def _version(pkg: str) -> str:
    try:
        return importlib_metadata.version(pkg)
    except importlib_metadata.PackageNotFoundError:
        return "unknown"


def versions() -> dict:
    return {
        "artifact": _version("artifact"),
        "numpy": np.__version__,
        "scipy": _version("scipy"),
        "pydantic": _version("pydantic"),
        "python": platform.python_version(),
    }


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


class RunWriter:
    """Persists each run as soon as it finishes (usable as a harness sink)."""

    def __init__(self, out_dir, experiment: str):
        self.out = Path(out_dir)
        self.runs_dir = self.out / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.experiment = experiment
        self.written: list[RunResult] = []

    def path_for(self, res: RunResult) -> Path:
        return self.runs_dir / f"{self.experiment}_{res.label}.jsonl"

    def __call__(self, res: RunResult) -> None:
        path = self.path_for(res)
        res.trace.write_jsonl(path, theta_scale=RAD_TO_DEG)
        if res.events:
            with path.with_suffix(".events.jsonl").open("w") as fh:
                for e in res.events:
                    fh.write(json.dumps(e, default=_json_default) + "\n")
        self.written.append(res)


def run_rows(results: Iterable[RunResult]) -> list[dict]:
    rows = []
    for res in results:
        s = res.trace.summary
        best = float(res.trace.costs.min()) if len(res.trace) else np.nan
        row = {
            "run": res.label,
            "algorithm": res.algorithm,
            "target": res.target.name,
            "steps": res.steps,
            "state": res.state_index,
            "repeat": res.repeat,
            "evaluations": len(res.trace),
            "final_best_cost": float(res.trace.best_so_far[-1]) if len(res.trace) else np.nan,
            "min_cost": best,
            "best_exact_fidelity": s.get("best_exact_fidelity"),
            "restarts": s.get("restarts"),
            "aborted": res.extras.get("aborted", False),
        }
        for key in ("q", "t", "checks", "degradation_restarts", "evals_to_threshold", "capped",
                    "exact_fidelity_at_stop"):
            if key in res.extras:
                row[key] = res.extras[key]
        pert = res.extras.get("perturbations")
        if pert is not None:
            ratios = [p["ratio"] for p in pert if np.isfinite(p["ratio"])]
            row["perturbations"] = len(pert)
            row["mean_ratio"] = float(np.mean(ratios)) if ratios else None
            row["undetected"] = sum(p["detectable"] and not p["detected"] for p in pert)
        rows.append(row)
    return rows


SUMMARY_COLUMNS = {
    "engineer": ["run", "target", "state", "repeat", "evaluations", "final_best_cost", "best_exact_fidelity",
                 "restarts", "aborted"],
    "perturb": ["run", "target", "state", "repeat", "evaluations", "q", "t", "final_best_cost",
                "best_exact_fidelity", "checks", "degradation_restarts", "perturbations", "mean_ratio",
                "undetected", "restarts", "aborted"],
    "sweep": ["run", "target", "steps", "state", "repeat", "evaluations", "evals_to_threshold", "capped",
              "exact_fidelity_at_stop", "aborted"],
    "compare": ["run", "algorithm", "target", "state", "repeat", "evaluations", "final_best_cost",
                "best_exact_fidelity", "aborted"],
}


def curve_rows(curves: dict) -> list[dict]:
    rows = []
    for name, (mean, std) in curves.items():
        for i, (m, s) in enumerate(zip(mean, std)):
            rows.append({"series": name, "eval": i, "mean_cost": m, "std_cost": s})
    return rows


def write_experiment(out_dir, cfg: ExperimentConfig, writer: RunWriter, extra_tables: dict | None = None,
                     curves: dict | None = None, status: str = "ok") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "summary.csv", run_rows(writer.written), SUMMARY_COLUMNS[cfg.experiment])
    if curves:
        write_csv(out / "curves.csv", curve_rows(curves), ["series", "eval", "mean_cost", "std_cost"])
    for name, (rows, columns) in (extra_tables or {}).items():
        write_csv(out / name, rows, columns)
    meta = {
        "experiment": cfg.experiment,
        "status": status,
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.seed,
        "runs": [dict(r.metadata(), file=f"runs/{writer.path_for(r).name}") for r in writer.written],
        "versions": versions(),
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")

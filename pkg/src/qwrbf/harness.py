"""Experiment families, degradation protocol, seeding and aggregation.

Every run gets its own seeds derived from the master seed through a
``SeedSequence`` spawn key ``(experiment, state, repeat, component)``, so
adding states or repeats never shifts the random streams of other runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .baselines import BaselineConfig, powell, random_search
from .config import ExperimentConfig, ExplicitTarget, explicit_state, parse_preset, preset_state, table1_lookup
from .oracle import NoiseModel, Oracle, PerturbationConfig, PerturbationEvent
from .optimizer import OptimizationAborted, OptimizerConfig, RbfOptimizer
from .trace import IterationRecord, Trace
from .walk import TargetState, param_count, random_target

log = logging.getLogger(__name__)

EXPERIMENT_INDEX = {"engineer": 0, "perturb": 1, "sweep": 2, "compare": 3}
COMPONENT = {"target": 0, "oracle": 1, "optimizer": 2}
# a restart counts as timely if it happens at the first check after the
# perturbation or at the one after it
DETECTION_SLACK = 1
DETECTABLE_MARGIN = 0.01


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=tuple(int(p) for p in path)).generate_state(1, np.uint64)[0])


def check_degradation(c_new: float, c_sampled: float, t: float) -> str:
    """``"restart"`` iff the re-measured cost exceeds the recorded one by more than ``t``."""
    if not (np.isfinite(c_new) and np.isfinite(c_sampled) and np.isfinite(t)) or t < 0:
        raise ValueError("check_degradation needs finite costs and t >= 0")
    return "restart" if c_new > c_sampled + t else "continue"


@dataclass
class TargetInfo:
    name: str
    state: TargetState
    preset: Optional[dict]
    seed: Optional[int] = None


def expand_targets(cfg: ExperimentConfig, steps: int, *prefix: int) -> list[TargetInfo]:
    """Resolve the configured target list for a walk of ``steps`` steps."""
    out: list[TargetInfo] = []
    for entry in cfg.targets:
        if isinstance(entry, ExplicitTarget):
            out.append(TargetInfo(entry.label or f"explicit{len(out)}", explicit_state(entry), None))
            continue
        spec = parse_preset(entry)
        if spec["kind"] == "random":
            for _ in range(spec["count"]):
                seed = derive_seed(cfg.seed, *prefix, len(out), 0, COMPONENT["target"])
                out.append(TargetInfo(f"random{len(out)}", random_target(steps + 1, seed), spec, seed))
        else:
            out.append(TargetInfo(entry, preset_state(spec, steps), spec))
    return out


@dataclass
class RunResult:
    label: str
    trace: Trace
    target: TargetInfo
    state_index: int
    repeat: int
    steps: int
    seeds: dict
    algorithm: str = "rbf"
    extras: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "label": self.label,
            "target": self.target.name,
            "target_seed": self.target.seed,
            "state": self.state_index,
            "repeat": self.repeat,
            "steps": self.steps,
            "algorithm": self.algorithm,
            "seeds": self.seeds,
        }


Sink = Callable[[RunResult], None]


def _bounds(cfg: ExperimentConfig, steps: int) -> np.ndarray:
    lo, hi = np.deg2rad(cfg.bounds_deg)
    return np.tile([lo, hi], (param_count(steps), 1))


def optimizer_config(cfg: ExperimentConfig, steps: int, seed: int, budget: Optional[int] = None) -> OptimizerConfig:
    opts = cfg.optimizer.model_dump(exclude_none=True)
    if "kinds" in opts:
        opts["kinds"] = tuple(opts["kinds"])
    return OptimizerConfig(bounds=_bounds(cfg, steps), budget=budget or cfg.budget, seed=seed, **opts)


def _noise(cfg: ExperimentConfig) -> NoiseModel:
    return NoiseModel(lam=cfg.noise_lambda, enabled=not cfg.noiseless)


def _seeds(cfg: ExperimentConfig, *path: int) -> dict:
    return {name: derive_seed(cfg.seed, *path, comp) for name, comp in COMPONENT.items() if name != "target"}


def _finish(result: RunResult, oracle: Oracle, best_x) -> None:
    tr = result.trace
    tr.summary["evaluations"] = len(tr)
    tr.summary["oracle_evaluations"] = oracle.evaluations
    if best_x is not None:
        tr.summary["best_exact_fidelity"] = oracle.evaluate_exact(best_x)


def _run_rbf(result: RunResult, cfg_opt: OptimizerConfig, oracle: Oracle, cost_fn=None, hook=None,
             sink: Optional[Sink] = None, on_exit: Optional[Callable[[], None]] = None) -> RbfOptimizer:
    """Run the surrogate optimizer into ``result.trace``; a failed run is still handed to ``sink``."""
    opt = RbfOptimizer(cfg_opt, cost_fn or oracle, hook, trace=result.trace)
    try:
        opt.run()
    except OptimizationAborted:
        result.extras["aborted"] = True
        if on_exit is not None:
            on_exit()
        if sink is not None:
            sink(result)
        raise
    if on_exit is not None:
        on_exit()
    return opt


def run_engineering(cfg: ExperimentConfig, sink: Optional[Sink] = None) -> list[RunResult]:
    """Optimize every (target, repeat) pair with the surrogate optimizer, perturbations off."""
    ex = EXPERIMENT_INDEX["engineer"]
    results = []
    for si, target in enumerate(expand_targets(cfg, cfg.steps, ex)):
        for r in range(cfg.repeats):
            seeds = _seeds(cfg, ex, si, r)
            oracle = Oracle(cfg.steps, target.state, _noise(cfg), seed=seeds["oracle"])
            res = RunResult(f"s{si:02d}_r{r:02d}", Trace(), target, si, r, cfg.steps, seeds)
            opt = _run_rbf(res, optimizer_config(cfg, cfg.steps, seeds["optimizer"]), oracle, sink=sink)
            _finish(res, oracle, opt.best_x)
            results.append(res)
            if sink is not None:
                sink(res)
    return results


@dataclass
class CheckRecord:
    index: int
    c_new: float
    c_sampled: float
    c_exact: float
    decision: str

    def to_json(self) -> dict:
        return {"type": "check", "evaluation": self.index, "c_new": self.c_new, "c_sampled": self.c_sampled,
                "c_exact": self.c_exact, "decision": self.decision}


class DegradationMonitor:
    """Optimizer hook implementing the periodic re-check of the best parameters.

    Every ``period`` optimizer evaluations one extra evaluation is spent at the
    current best point. The re-measured cost is compared with the cost recorded
    when that point was first sampled (never refreshed); a restart drops the
    optimizer state and its best record. The exact cost at the best point under
    the device's current hidden offsets is logged for auditing only.
    """

    def __init__(self, oracle: Oracle, threshold: float, period: int = 10):
        self.oracle = oracle
        self.threshold = threshold
        self.period = period
        self.count = 0
        self.checks: list[CheckRecord] = []
        self._seen = 0

    def _tag_perturbation(self, rec: IterationRecord) -> None:
        log_len = len(self.oracle.device.event_log)
        if log_len > self._seen and rec.event in ("none", "lhd_init", "global", "local", "refine"):
            rec.event = "perturbation"
        self._seen = log_len

    def __call__(self, opt: RbfOptimizer, rec: IterationRecord) -> Optional[str]:
        self._tag_perturbation(rec)
        self.count += 1
        if self.count % self.period or opt.best_x is None or opt.remaining <= 0:
            return None
        c_sampled = opt.best_value
        c_new = opt.evaluate_external(opt.best_x)
        self._tag_perturbation(opt.trace.records[-1])
        decision = check_degradation(c_new, c_sampled, self.threshold)
        c_exact = 1.0 - self.oracle.evaluate_exact(opt.best_x)
        self.checks.append(CheckRecord(len(opt.trace) - 1, c_new, c_sampled, c_exact, decision))
        return "restart" if decision == "restart" else None


class ForcedOffsets:
    """Cost wrapper that applies scheduled offsets just before the given oracle evaluation."""

    def __init__(self, oracle: Oracle, schedule: Iterable[tuple[int, tuple[int, int], float]]):
        self.oracle = oracle
        self.schedule = sorted(schedule)

    def __call__(self, theta) -> float:
        while self.schedule and self.schedule[0][0] <= self.oracle.evaluations:
            _, handle, delta = self.schedule.pop(0)
            self.oracle.inject_offset(handle, delta)
        return self.oracle.cost(theta)


def perturbation_analysis(trace: Trace, events: Sequence[PerturbationEvent], checks: Sequence[CheckRecord],
                          threshold: float, period: int) -> list[dict]:
    """Per perturbation: best fidelity before and after, and whether it was caught in time.

    Kicks at the same evaluation are merged. "before" is the running best at
    the kick; "after" is the best non-check fidelity from the kick up to the
    next kick or the end of the run. A kick is *detectable* when, at the first
    check after it, the exact cost at the best point exceeds the recorded cost
    by more than ``threshold + DETECTABLE_MARGIN``; it is *detected* when a
    restart fires at that check or within ``DETECTION_SLACK`` checks after it.
    """
    kicks = sorted({e.evaluation for e in events})
    n = len(trace)
    rows = []
    for i, e in enumerate(kicks):
        if e >= n:
            continue
        end = kicks[i + 1] if i + 1 < len(kicks) else n
        before = 1.0 - trace.records[e - 1].best if e > 0 and np.isfinite(trace.records[e - 1].best) else np.nan
        window = [r.cost for r in trace.records[e:end] if r.event != "degradation_check"]
        after = 1.0 - min(window) if window else np.nan
        later = [c for c in checks if c.index >= e]
        first = later[0] if later else None
        detectable = bool(first is not None and first.c_exact > first.c_sampled + threshold + DETECTABLE_MARGIN)
        restart_at = next((c.index for c in later if c.decision == "restart"), None)
        limit = None if first is None else first.index + DETECTION_SLACK * (period + 1)
        detected = restart_at is not None and limit is not None and restart_at <= limit
        rows.append({
            "evaluation": e,
            "f_before": before,
            "f_after": after,
            "ratio": after / before if before and np.isfinite(before) else np.nan,
            "detectable": detectable,
            "detected": detected,
            "first_check": None if first is None else first.index,
            "restart_at": restart_at,
        })
    return rows


def run_perturbation(cfg: ExperimentConfig, sink: Optional[Sink] = None) -> list[RunResult]:
    """Surrogate optimization on a drifting device with periodic degradation checks."""
    ex = EXPERIMENT_INDEX["perturb"]
    ps = cfg.perturbation
    results = []
    for si, target in enumerate(expand_targets(cfg, cfg.steps, ex)):
        q_table, t_table = table1_lookup(target.preset)
        q = ps.q if ps.q is not None else q_table
        t = ps.threshold if ps.threshold is not None else t_table
        pert = PerturbationConfig(
            probability_q=q,
            offset_mean=np.deg2rad(ps.mean_deg),
            offset_std=np.deg2rad(ps.std_deg),
            handles=tuple(tuple(h) for h in ps.handles),
            enabled=q > 0,
        )
        for r in range(cfg.repeats):
            seeds = _seeds(cfg, ex, si, r)
            oracle = Oracle(cfg.steps, target.state, _noise(cfg), perturbation=pert, seed=seeds["oracle"])
            forced = ForcedOffsets(oracle, [(f.evaluation, tuple(f.handle), np.deg2rad(f.offset_deg)) for f in ps.forced])
            monitor = DegradationMonitor(oracle, t, ps.check_period)
            res = RunResult(f"s{si:02d}_r{r:02d}", Trace(), target, si, r, cfg.steps, seeds)
            res.extras.update(q=q, t=t)

            def log_events(res=res, oracle=oracle, monitor=monitor):
                res.events = [_event_json(e) for e in oracle.device.event_log] + [c.to_json() for c in monitor.checks]

            opt = _run_rbf(res, optimizer_config(cfg, cfg.steps, seeds["optimizer"]), oracle, forced, monitor,
                           sink=sink, on_exit=log_events)
            _finish(res, oracle, opt.best_x)
            rows = perturbation_analysis(res.trace, oracle.device.event_log, monitor.checks, t, ps.check_period)
            res.extras["perturbations"] = rows
            res.extras["checks"] = len(monitor.checks)
            res.extras["degradation_restarts"] = res.trace.events.count("degradation_restart")
            results.append(res)
            if sink is not None:
                sink(res)
    return results


def _event_json(e: PerturbationEvent) -> dict:
    return {"type": "perturbation", "evaluation": e.evaluation, "handle": list(e.handle),
            "offset_deg": float(np.rad2deg(e.offset))}


class _StopAtFidelity:
    def __init__(self, threshold: float):
        self.threshold = threshold
        self.hit: Optional[int] = None

    def __call__(self, opt, rec) -> Optional[str]:
        if 1.0 - rec.cost >= self.threshold:
            self.hit = rec.eval
            return "stop"
        return None


def run_sweep(cfg: ExperimentConfig, sink: Optional[Sink] = None) -> tuple[list[RunResult], list[dict]]:
    """Evaluations needed to reach the noisy fidelity threshold, per number of walk steps."""
    ex = EXPERIMENT_INDEX["sweep"]
    sw = cfg.sweep
    results = []
    table = []
    sub = cfg.model_copy(update={"targets": [f"random:{sw.targets_per_step}"]})
    for steps in sw.steps:
        counts, capped = [], 0
        for si, target in enumerate(expand_targets(sub, steps, ex, steps)):
            for r in range(cfg.repeats):
                seeds = _seeds(cfg, ex, steps, si, r)
                oracle = Oracle(steps, target.state, _noise(cfg), seed=seeds["oracle"])
                stop = _StopAtFidelity(sw.threshold)
                res = RunResult(f"n{steps:02d}_s{si:02d}_r{r:02d}", Trace(), target, si, r, steps, seeds)
                opt = _run_rbf(res, optimizer_config(cfg, steps, seeds["optimizer"]), oracle, hook=stop, sink=sink)
                _finish(res, oracle, opt.best_x)
                reached = stop.hit is not None
                res.extras.update(
                    evals_to_threshold=stop.hit + 1 if reached else None,
                    capped=not reached,
                    exact_fidelity_at_stop=oracle.evaluate_exact(res.trace.records[-1].theta) if reached else None,
                )
                # a capped run counts at the budget, a lower bound on its true cost
                counts.append(stop.hit + 1 if reached else len(res.trace))
                capped += not reached
                results.append(res)
                if sink is not None:
                    sink(res)
        c = np.asarray(counts, dtype=float)
        table.append({
            "steps": steps,
            "n_par": param_count(steps),
            "mean_evals": float(c.mean()) if c.size else np.nan,
            "se_evals": float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else np.nan,
            "reached": int(c.size) - capped,
            "capped": capped,
        })
    return results, table


def run_comparison(cfg: ExperimentConfig, sink: Optional[Sink] = None) -> tuple[list[RunResult], dict]:
    """Surrogate optimizer against the baselines on identical targets and oracle seeds."""
    ex = EXPERIMENT_INDEX["compare"]
    bounds = _bounds(cfg, cfg.steps)
    results = []
    for si, target in enumerate(expand_targets(cfg, cfg.steps, ex)):
        for r in range(cfg.repeats):
            seeds = _seeds(cfg, ex, si, r)
            for alg in cfg.algorithms:
                oracle = Oracle(cfg.steps, target.state, _noise(cfg), seed=seeds["oracle"])
                res = RunResult(f"s{si:02d}_r{r:02d}_{alg}", Trace(), target, si, r, cfg.steps, seeds, alg)
                if alg == "rbf":
                    opt = _run_rbf(res, optimizer_config(cfg, cfg.steps, seeds["optimizer"]), oracle, sink=sink)
                    best_x = opt.best_x
                else:
                    bcfg = BaselineConfig(bounds, cfg.budget, seed=seeds["optimizer"])
                    res.trace = (random_search if alg == "random" else powell)(oracle, bcfg)
                    best_x = res.trace.summary.get("best_theta")
                _finish(res, oracle, best_x)
                results.append(res)
                if sink is not None:
                    sink(res)
    curves = {}
    for alg in cfg.algorithms:
        grouped: dict[int, list[np.ndarray]] = {}
        for res in results:
            if res.algorithm == alg:
                grouped.setdefault(res.state_index, []).append(pad_curve(res.trace.best_so_far, cfg.budget))
        curves[alg] = aggregate(grouped)
    return results, curves


def pad_curve(curve: np.ndarray, length: int) -> np.ndarray:
    """Extend a best-so-far curve to ``length`` by carrying its last value forward."""
    curve = np.asarray(curve, dtype=float)
    if curve.size >= length:
        return curve[:length]
    if curve.size == 0:
        raise ValueError("cannot pad an empty curve")
    return np.concatenate([curve, np.full(length - curve.size, curve[-1])])


def aggregate(curves: Mapping[object, Sequence[np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean curve and spread across states.

    Repeats are averaged within each state first; the returned mean is the
    average of those per-state curves and the spread is their (population)
    standard deviation.
    """
    per_state = []
    length = None
    for key in curves:
        reps = [np.asarray(c, dtype=float) for c in curves[key]]
        if not reps:
            raise ValueError(f"state {key!r} has no traces")
        for c in reps:
            if length is None:
                length = c.size
            elif c.size != length:
                raise ValueError("traces differ in length; pad them first")
        per_state.append(np.mean(reps, axis=0))
    if not per_state:
        raise ValueError("no traces to aggregate")
    stacked = np.vstack(per_state)
    return stacked.mean(axis=0), stacked.std(axis=0)


def engineering_curves(results: Sequence[RunResult], budget: int) -> tuple[np.ndarray, np.ndarray]:
    grouped: dict[int, list[np.ndarray]] = {}
    for res in results:
        grouped.setdefault(res.state_index, []).append(pad_curve(res.trace.best_so_far, budget))
    return aggregate(grouped)

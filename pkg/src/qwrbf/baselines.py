"""Reference optimizers: uniform random search and Powell's direction-set method."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .trace import Trace

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class BaselineConfig:
    bounds: np.ndarray
    budget: int
    seed: Optional[int] = None
    start: Optional[np.ndarray] = None
    line_tol: float = 1e-6
    max_line_evals: int = 40
    initial_step: float = 0.05

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.start is not None:
            self.start = np.asarray(self.start, dtype=float)
            if np.any(self.start < self.bounds[:, 0]) or np.any(self.start > self.bounds[:, 1]):
                raise ValueError("start point outside bounds")


class _BudgetExhausted(Exception):
    pass


class _Recorder:
    """Counts evaluations against the budget and logs them in a trace."""

    def __init__(self, cost_fn, config: BaselineConfig, trace: Trace):
        self.cost_fn = cost_fn
        self.budget = config.budget
        self.lo = config.bounds[:, 0]
        self.span = config.bounds[:, 1] - config.bounds[:, 0]
        self.trace = trace
        self.best = np.inf
        self.best_u = None

    def __call__(self, u: np.ndarray) -> float:
        if len(self.trace) >= self.budget:
            raise _BudgetExhausted()
        x = self.lo + u * self.span
        y = float(self.cost_fn(x))
        if y < self.best:
            self.best, self.best_u = y, u.copy()
        self.trace.append(x, y, self.best, "none")
        return y

    def finish(self) -> Trace:
        best_x = None if self.best_u is None else (self.lo + self.best_u * self.span).tolist()
        self.trace.summary.update(best_theta=best_x, best_cost=float(self.best))
        return self.trace


def random_search(cost_fn: Callable[[np.ndarray], float], config: BaselineConfig) -> Trace:
    """Evaluate ``budget`` independent uniform points in the box."""
    rng = np.random.default_rng(config.seed)
    rec = _Recorder(cost_fn, config, Trace())
    dim = config.bounds.shape[0]
    for _ in range(config.budget):
        rec(rng.random(dim))
    return rec.finish()


def _segment(x: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """Range of ``a`` keeping ``x + a*d`` inside the unit cube."""
    lo, hi = -np.inf, np.inf
    for xi, di in zip(x, d):
        if di > 0:
            lo, hi = max(lo, -xi / di), min(hi, (1 - xi) / di)
        elif di < 0:
            lo, hi = max(lo, (1 - xi) / di), min(hi, -xi / di)
    return lo, hi


def line_minimize(f, x: np.ndarray, fx: float, d: np.ndarray, tol: float, max_evals: int,
                  step: float = 0.05) -> tuple[np.ndarray, float]:
    """Bracket along unit direction ``d`` by geometric expansion, then golden-section.

    The segment is clipped to the unit cube. Returns the best point seen and its value.
    """
    a_lo, a_hi = _segment(x, d)
    evals = 0
    best_a, best_f = 0.0, fx

    def g(a):
        nonlocal evals, best_a, best_f
        evals += 1
        v = f(np.clip(x + a * d, 0.0, 1.0))
        if v < best_f:
            best_a, best_f = a, v
        return v

    lo, hi = max(-step, a_lo), min(step, a_hi)
    sign = 0.0
    if hi > 0:
        f_fwd = g(hi)
        if f_fwd < fx:
            sign, cur, f_cur, limit = 1.0, hi, f_fwd, a_hi
    if not sign and lo < 0:
        f_back = g(lo)
        if f_back < fx:
            sign, cur, f_cur, limit = -1.0, lo, f_back, a_lo
    if sign:
        prev = 0.0
        lo, hi = sorted((prev, cur))
        while evals < max_evals:
            nxt = cur + (cur - prev) / GOLDEN
            nxt = min(nxt, limit) if sign > 0 else max(nxt, limit)
            if nxt == cur:
                lo, hi = sorted((prev, cur))
                break
            f_nxt = g(nxt)
            if f_nxt >= f_cur:
                lo, hi = sorted((prev, nxt))
                break
            prev, cur, f_cur = cur, nxt, f_nxt
    if hi - lo > tol and evals + 2 <= max_evals:
        x1 = hi - GOLDEN * (hi - lo)
        x2 = lo + GOLDEN * (hi - lo)
        f1, f2 = g(x1), g(x2)
        while hi - lo > tol and evals < max_evals:
            if f1 < f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - GOLDEN * (hi - lo)
                f1 = g(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + GOLDEN * (hi - lo)
                f2 = g(x2)
    return np.clip(x + best_a * d, 0.0, 1.0), best_f


def powell(cost_fn: Callable[[np.ndarray], float], config: BaselineConfig) -> Trace:
    """Powell's conjugate direction method inside the box, all work in scaled units."""
    rec = _Recorder(cost_fn, config, Trace())
    dim = config.bounds.shape[0]
    lo, span = config.bounds[:, 0], config.bounds[:, 1] - config.bounds[:, 0]
    x = np.full(dim, 0.5) if config.start is None else (config.start - lo) / span
    directions = [e for e in np.eye(dim)]
    sweep_best = []
    try:
        fx = rec(x)
        while True:
            x0, f0 = x.copy(), fx
            decreases = []
            for d in directions:
                f_before = fx
                x, fx = line_minimize(rec, x, fx, d, config.line_tol, config.max_line_evals, config.initial_step)
                decreases.append(f_before - fx)
            disp = x - x0
            norm = np.linalg.norm(disp)
            if norm > 0:
                new_d = disp / norm
                del directions[int(np.argmax(decreases))]
                directions.append(new_d)
                x, fx = line_minimize(rec, x, fx, new_d, config.line_tol, config.max_line_evals,
                                      config.initial_step)
            sweep_best.append(fx)
            if f0 - fx < config.line_tol:
                break
    except _BudgetExhausted:
        pass
    trace = rec.finish()
    trace.summary["sweeps"] = len(sweep_best)
    trace.summary["sweep_best"] = sweep_best
    return trace

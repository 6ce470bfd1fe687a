"""RBF surrogate global optimizer.

The search runs in the unit cube; the box given in :class:`OptimizerConfig`
is only used to map points back before calling the cost function. A cycle is
``num_global_searches`` metric-stochastic global proposals (surrogate value
traded against distance from evaluated points) followed by one local
surrogate-minimization step. Every ``refinement_frequency`` completed cycles a
trust-region refinement step runs around the best node, and after
``max_stalled_iterations`` evaluations without improvement the model is thrown
away and the search restarts from a new Latin hypercube design.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .rbf import (
    RbfKind,
    SurrogateFitError,
    SurrogateModel,
    distances,
    eval_with_min_distance,
    fit_surrogate,
    poly_matrix,
    rbf_value,
    select_model_loo,
)
from .sampling import latin_hypercube
from .trace import IterationRecord, Trace

log = logging.getLogger(__name__)

GLOBAL_WEIGHTS = (0.95, 0.75, 0.5, 0.3, 0.1)
# kernels whose surrogates have interior minima; linear and near-linear
# multiquadric minimize on the nodes, which starves the local step
SMOOTH_KINDS = ("cubic", "thin_plate")
LOCAL_STD = 0.05
RADIUS_FLOOR = 1e-4


class OptimizationAborted(RuntimeError):
    """The cost function raised; ``trace`` holds everything evaluated so far."""

    def __init__(self, trace: Trace, cause: BaseException):
        super().__init__(f"cost function failed after {len(trace)} evaluations: {cause!r}")
        self.trace = trace


@dataclass
class OptimizerConfig:
    bounds: np.ndarray
    budget: int
    init_points: Optional[int] = None
    num_global_searches: int = 5
    max_stalled_iterations: int = 100
    refinement_frequency: int = 3
    min_distance: float = 1e-6
    ridge: float = 1e-8
    candidate_pool: Optional[int] = None
    model_reselect_period: int = 25
    global_weights: tuple = GLOBAL_WEIGHTS
    kinds: tuple = SMOOTH_KINDS
    initial_kind: str = "cubic"
    local_std: float = LOCAL_STD
    seed: Optional[int] = None

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ValueError("every bound needs lo < hi")
        n = self.dim
        if self.init_points is None:
            self.init_points = 2 * (n + 1)
        if self.candidate_pool is None:
            self.candidate_pool = min(500 * n, 20000)
        for name in ("init_points", "num_global_searches", "max_stalled_iterations",
                     "refinement_frequency", "candidate_pool", "model_reselect_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.local_std > 0:
            raise ValueError("local_std must be positive")
        if self.budget < self.init_points:
            raise ValueError("budget must be >= init_points")

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


@dataclass
class OptState:
    nodes: list = field(default_factory=list)
    values: list = field(default_factory=list)
    best_x: Optional[np.ndarray] = None
    best_value: float = np.inf
    best_index: int = -1
    stall: int = 0
    cycle_pos: int = 0
    cycles: int = 0
    radius: float = 0.0
    restarts: int = 0
    kind: RbfKind = field(default_factory=RbfKind)
    evals_since_select: int = 0

    def best_node(self) -> int:
        return int(np.argmin(self.values))


class _Restart(Exception):
    def __init__(self, tag: str, reset_best: bool):
        self.tag = tag
        self.reset_best = reset_best


class _Stop(Exception):
    pass


# hook(optimizer, record) -> None | "restart" | "stop"
Hook = Callable[["RbfOptimizer", IterationRecord], Optional[str]]


def propose_global(model: SurrogateModel, nodes: np.ndarray, best: np.ndarray, weight: float,
                   config: OptimizerConfig, rng: np.random.Generator) -> np.ndarray:
    """Weighted surrogate/distance candidate selection in the unit cube."""
    cand = candidate_pool(best, config.candidate_pool, rng, config.local_std)
    if np.array_equal(model.nodes, nodes):
        # one distance pass serves both terms
        values, dist = eval_with_min_distance(model, cand)
    else:
        values, dist = model(cand), distances(cand, nodes).min(axis=1)
    keep = dist >= config.min_distance
    if not keep.any():
        return rng.random(nodes.shape[1])
    cand, dist, values = cand[keep], dist[keep], values[keep]
    score = weight * _unit_range(values) + (1.0 - weight) * (1.0 - _unit_range(dist))
    return cand[int(np.argmin(score))]


def candidate_pool(center: np.ndarray, size: int, rng: np.random.Generator,
                   std: float = LOCAL_STD) -> np.ndarray:
    """Half uniform in the cube, half Gaussian with ``std`` around ``center`` (clipped)."""
    n_unif = size // 2
    dim = center.size
    unif = rng.random((n_unif, dim))
    local = np.clip(center + std * rng.standard_normal((size - n_unif, dim)), 0.0, 1.0)
    return np.vstack([unif, local])


def _unit_range(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def pattern_search(model: SurrogateModel, starts: np.ndarray, step: float = 0.1, min_step: float = 1e-5,
                   max_sweeps: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Hooke-Jeeves coordinate search on the surrogate from several starts at once.

    Squared distances to the nodes are updated incrementally, so one poll of a
    coordinate costs ``O(starts * nodes)``.
    """
    nodes = model.nodes
    lam = model.lambda_coeffs
    kind = model.rbf
    X = np.array(starts, dtype=float)
    S, dim = X.shape
    D2 = cdist(X, nodes, "sqeuclidean")
    poly = model.poly_coeffs

    def value(D2_, X_):
        out = rbf_value(kind, np.sqrt(np.maximum(D2_, 0.0))) @ lam
        if poly.size:
            out = out + poly_matrix(X_, kind.degree) @ poly
        return out

    f = value(D2, X)
    h = np.full(S, step)
    for _ in range(max_sweeps):
        active = h >= min_step
        if not active.any():
            break
        X0, f0 = X.copy(), f.copy()
        rows = np.flatnonzero(active)
        for i in range(dim):
            # poll both directions of coordinate i in one evaluation
            xi = X[rows, i]
            cand = np.concatenate([np.clip(xi + h[rows], 0.0, 1.0), np.clip(xi - h[rows], 0.0, 1.0)])
            delta = cand - np.concatenate([xi, xi])
            base = np.concatenate([D2[rows], D2[rows]])
            offset = np.concatenate([xi, xi])[:, None] - nodes[:, i][None, :]
            D2_try = base + (2.0 * delta)[:, None] * offset + (delta**2)[:, None]
            X_try = np.concatenate([X[rows], X[rows]])
            X_try[:, i] = cand
            f_try = value(D2_try, X_try)
            f_try[delta == 0] = np.inf
            n = rows.size
            pick = np.where(f_try[n:] < f_try[:n], n + np.arange(n), np.arange(n))
            better = f_try[pick] < f[rows]
            if better.any():
                r, p = rows[better], pick[better]
                X[r], D2[r], f[r] = X_try[p], D2_try[p], f_try[p]
        moved = f < f0
        # pattern move along the sweep displacement where the sweep helped
        if moved.any():
            X_pat = np.clip(X + (X - X0), 0.0, 1.0)
            D2_pat = cdist(X_pat, nodes, "sqeuclidean")
            f_pat = value(D2_pat, X_pat)
            take = moved & (f_pat < f)
            X[take], D2[take], f[take] = X_pat[take], D2_pat[take], f_pat[take]
        h = np.where(active & ~moved, h * 0.5, h)
        # guard against drift from incremental updates
        D2 = cdist(X, nodes, "sqeuclidean")
    return X, value(D2, X)


def propose_local(model: SurrogateModel, nodes: np.ndarray, best: np.ndarray, config: OptimizerConfig,
                  rng: np.random.Generator, n_starts: int = 10) -> np.ndarray:
    """Approximate surrogate minimizer, kept at least ``min_distance`` from every node."""
    pool = candidate_pool(best, config.candidate_pool, rng, config.local_std)
    order = np.argsort(model(pool), kind="stable")[: n_starts - 1]
    starts = np.vstack([best, pool[order]])
    X, _ = pattern_search(model, starts)
    X = _push_out(X, nodes, config.min_distance, rng)
    dist = cdist(X, nodes).min(axis=1)
    ok = np.flatnonzero(dist >= config.min_distance)
    if ok.size:
        f = model(X[ok])
        return X[ok[np.argmin(f)]]
    for _ in range(100):
        x = np.clip(best + 0.01 * rng.standard_normal(best.size), 0.0, 1.0)
        if cdist(x[None], nodes).min() >= config.min_distance:
            return x
    return rng.random(best.size)


def _push_out(X: np.ndarray, nodes: np.ndarray, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Move points closer than ``radius`` to a node onto that node's exclusion sphere."""
    X = X.copy()
    d = cdist(X, nodes)
    nearest = d.argmin(axis=1)
    for i in np.flatnonzero(d[np.arange(len(X)), nearest] < radius):
        c = nodes[nearest[i]]
        v = X[i] - c
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v = rng.standard_normal(c.size)
            norm = np.linalg.norm(v)
        X[i] = np.clip(c + (radius * (1.0 + 1e-9)) * v / norm, 0.0, 1.0)
    return X


class RbfOptimizer:
    """Stateful optimizer; call :meth:`run` once.

    ``hook`` is called after every evaluation and may return ``"restart"``
    (drop the model and the best record) or ``"stop"``. It may spend extra
    evaluations through :meth:`evaluate_external`.
    """

    def __init__(self, config: OptimizerConfig, cost_fn: Callable[[np.ndarray], float],
                 hook: Optional[Hook] = None, trace: Optional[Trace] = None):
        self.config = config
        self.cost_fn = cost_fn
        self.hook = hook
        self.trace = trace if trace is not None else Trace()
        self.rng = np.random.default_rng(config.seed)
        self.lo = config.bounds[:, 0]
        self.span = config.bounds[:, 1] - config.bounds[:, 0]
        self.state = self._fresh_state()
        self.state.restarts = 0
        # best over the whole run, which survives stall restarts
        self.best_x: Optional[np.ndarray] = None
        self.best_value = np.inf
        self.best_eval = -1
        self._queue: list[np.ndarray] = []
        self._next_tag: Optional[str] = None

    # -- bookkeeping -------------------------------------------------------
    def _fresh_state(self) -> OptState:
        return OptState(radius=0.1 * np.sqrt(self.config.dim), kind=RbfKind(self.config.initial_kind))

    def unscale(self, u: np.ndarray) -> np.ndarray:
        return self.lo + u * self.span

    def scale(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lo) / self.span

    @property
    def n_evals(self) -> int:
        return len(self.trace)

    @property
    def remaining(self) -> int:
        return self.config.budget - self.n_evals

    def _call(self, x: np.ndarray) -> float:
        try:
            return float(self.cost_fn(x))
        except Exception as exc:
            raise OptimizationAborted(self.trace, exc) from exc

    def _evaluate(self, u: np.ndarray, tag: str) -> float:
        st = self.state
        x = self.unscale(u)
        y = self._call(x)
        if self._next_tag is not None:
            tag, self._next_tag = self._next_tag, None
        if y < self.best_value:
            self.best_value, self.best_x, self.best_eval = y, x.copy(), self.n_evals
        if not st.values or y < min(st.values):
            st.stall = 0
        else:
            st.stall += 1
        if not st.nodes or cdist(u[None], np.asarray(st.nodes)).min() >= self.config.min_distance:
            st.nodes.append(np.array(u))
            st.values.append(y)
        st.evals_since_select += 1
        rec = self.trace.append(x, y, self.best_value, tag)
        action = self.hook(self, rec) if self.hook is not None else None
        if action == "stop":
            raise _Stop()
        if action == "restart":
            raise _Restart("degradation_restart", reset_best=True)
        if st.stall > self.config.max_stalled_iterations:
            raise _Restart("stall_restart", reset_best=False)
        return y

    def evaluate_external(self, x: np.ndarray, tag: str = "degradation_check") -> float:
        """Spend one evaluation outside the model (e.g. a re-check of the best point)."""
        y = self._call(np.asarray(x, dtype=float))
        self.trace.append(x, y, self.best_value, tag)
        return y

    def _restart(self, tag: str, reset_best: bool) -> None:
        restarts = self.state.restarts + 1
        log.debug("restart (%s) after %d evaluations", tag, self.n_evals)
        self.state = self._fresh_state()
        self.state.restarts = restarts
        if reset_best:
            self.best_x, self.best_value, self.best_eval = None, np.inf, -1
        self._queue = list(latin_hypercube(self.config.init_points, self.config.dim, self.rng))
        self._next_tag = tag

    # -- model -------------------------------------------------------------
    def fit(self) -> SurrogateModel:
        st, cfg = self.state, self.config
        nodes, values = np.asarray(st.nodes), np.asarray(st.values)
        if st.evals_since_select >= cfg.model_reselect_period:
            st.kind = select_model_loo(nodes, values, cfg.kinds, st.kind, ridge=cfg.ridge)
            st.evals_since_select = 0
        ridge = cfg.ridge
        for _ in range(4):
            try:
                return fit_surrogate(nodes, values, st.kind, ridge)
            except SurrogateFitError:
                ridge = max(ridge, 1e-12) * 1e3
        for name in cfg.kinds:
            try:
                return fit_surrogate(nodes, values, RbfKind(name), 1e-4)
            except SurrogateFitError:
                continue
        raise SurrogateFitError("no kernel could be fitted")

    # -- steps ---------------------------------------------------------------
    def _search_step(self) -> None:
        st, cfg = self.state, self.config
        nodes = np.asarray(st.nodes)
        best = nodes[st.best_node()]
        try:
            model = self.fit()
        except SurrogateFitError:
            model = None
        n_global = cfg.num_global_searches
        if model is None:
            u, tag = self.rng.random(cfg.dim), "global"
        elif st.cycle_pos < n_global:
            w = cfg.global_weights[st.cycle_pos % len(cfg.global_weights)]
            u, tag = propose_global(model, nodes, best, w, cfg, self.rng), "global"
        else:
            u, tag = propose_local(model, nodes, best, cfg, self.rng), "local"
        st.cycle_pos = (st.cycle_pos + 1) % (n_global + 1)
        self._evaluate(u, tag)
        if st.cycle_pos == 0:
            st.cycles += 1
            if st.cycles % cfg.refinement_frequency == 0 and self.remaining > 0:
                self.refine()

    def refine(self) -> bool:
        """Affine trust-region step around the best node.

        The region is the cube of half-width ``radius / sqrt(N)`` centred on the
        best node (so ``radius`` is the distance to its corners). Returns True
        if a refinement evaluation was spent.
        """
        st, cfg = self.state, self.config
        dim = cfg.dim
        if st.radius <= RADIUS_FLOOR or len(st.nodes) < dim + 1:
            return False
        nodes, values = np.asarray(st.nodes), np.asarray(st.values)
        ib = st.best_node()
        center, base = nodes[ib], values[ib]
        dist = np.linalg.norm(nodes - center, axis=1)
        near = np.flatnonzero(dist <= st.radius)
        if near.size < dim + 1:
            near = np.argsort(dist, kind="stable")[: dim + 1]
        A = np.hstack([np.ones((near.size, 1)), nodes[near] - center])
        coef, _, rank, _ = np.linalg.lstsq(A, values[near], rcond=None)
        if rank < dim + 1:
            st.radius = max(0.5 * st.radius, RADIUS_FLOOR)
            return False
        half = st.radius / np.sqrt(dim)
        u = affine_box_minimizer(coef[1:], center, half)
        if cdist(u[None], nodes).min() < cfg.min_distance:
            st.radius = max(0.5 * st.radius, RADIUS_FLOOR)
            return False
        y = self._evaluate(u, "refine")
        if y < base:
            st.radius = min(2.0 * st.radius, 0.5 * np.sqrt(dim))
        else:
            st.radius = max(0.5 * st.radius, RADIUS_FLOOR)
        return True

    # -- driver --------------------------------------------------------------
    def run(self) -> Trace:
        cfg = self.config
        self._queue = list(latin_hypercube(cfg.init_points, cfg.dim, self.rng))
        try:
            while self.remaining > 0:
                try:
                    if self._queue:
                        self._evaluate(self._queue.pop(0), "lhd_init")
                    else:
                        self._search_step()
                except _Restart as r:
                    self._restart(r.tag, r.reset_best)
        except _Stop:
            pass
        self.trace.summary.update(
            best_theta=None if self.best_x is None else self.best_x.tolist(),
            best_cost=float(self.best_value),
            restarts=self.state.restarts,
        )
        return self.trace


def affine_box_minimizer(gradient: np.ndarray, center: np.ndarray, half_width: float) -> np.ndarray:
    """Minimizer of ``g . (x - c)`` over ``[c - h, c + h]`` intersected with the unit cube."""
    lo = np.clip(center - half_width, 0.0, 1.0)
    hi = np.clip(center + half_width, 0.0, 1.0)
    return np.where(gradient > 0, lo, np.where(gradient < 0, hi, center))


def run(config: OptimizerConfig, cost_fn, hook: Optional[Hook] = None) -> Trace:
    return RbfOptimizer(config, cost_fn, hook).run()

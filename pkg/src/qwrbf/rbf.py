"""Radial basis function interpolants with polynomial tails."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

KINDS = ("linear", "cubic", "multiquadric", "thin_plate", "gaussian")
TAIL_DEGREE = {"linear": 0, "cubic": 1, "multiquadric": 0, "thin_plate": 1, "gaussian": -1}
DEFAULT_GAMMA = 0.1


class SurrogateFitError(RuntimeError):
    """The interpolation system is singular or numerically ill-conditioned."""


@dataclass(frozen=True)
class RbfKind:
    name: str = "cubic"
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown RBF {self.name!r}; expected one of {KINDS}")

    @property
    def degree(self) -> int:
        return TAIL_DEGREE[self.name]

    def tail_size(self, dim: int) -> int:
        return {-1: 0, 0: 1, 1: dim + 1}[self.degree]

    def __call__(self, r):
        return rbf_value(self, r)


def rbf_value(kind: RbfKind, r):
    r = np.asarray(r, dtype=float)
    g = kind.gamma
    if kind.name == "linear":
        return r
    if kind.name == "cubic":
        return r * r * r
    if kind.name == "multiquadric":
        return np.sqrt(r**2 + g**2)
    if kind.name == "thin_plate":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = r**2 * np.log(r)
        return np.where(r > 0, out, 0.0)
    return np.exp(-g * r**2)


def poly_matrix(points: np.ndarray, degree: int) -> np.ndarray:
    """Basis ``1`` (degree 0) or ``1, x_1, ..., x_N`` (degree 1) evaluated at points."""
    k = points.shape[0]
    if degree < 0:
        return np.empty((k, 0))
    if degree == 0:
        return np.ones((k, 1))
    return np.hstack([np.ones((k, 1)), points])


@dataclass
class SurrogateModel:
    nodes: np.ndarray
    values: np.ndarray
    rbf: RbfKind
    lambda_coeffs: np.ndarray
    poly_coeffs: np.ndarray
    ridge: float = 0.0

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __call__(self, x):
        return surrogate_eval(self, x)


def system_matrix(nodes: np.ndarray, kind: RbfKind, ridge: float = 0.0) -> np.ndarray:
    """The saddle-point matrix ``[Phi + ridge*I, P; P^T, 0]``."""
    k = nodes.shape[0]
    P = poly_matrix(nodes, kind.degree)
    m = P.shape[1]
    if k < m:
        raise SurrogateFitError(f"{k} nodes cannot determine a tail of size {m}")
    A = np.zeros((k + m, k + m))
    A[:k, :k] = rbf_value(kind, cdist(nodes, nodes))
    A[:k, :k][np.diag_indices(k)] += ridge
    A[:k, k:] = P
    A[k:, :k] = P.T
    return A


def _solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(A, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SurrogateFitError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SurrogateFitError("non-finite coefficients")
    return sol


def fit_surrogate(nodes, values, kind: RbfKind, ridge: float = 0.0) -> SurrogateModel:
    """Solve ``[Phi + ridge*I, P; P^T, 0] [lambda; c] = [values; 0]``.

    Raises :class:`SurrogateFitError` when LAPACK reports a singular or
    ill-conditioned system.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    k, dim = nodes.shape
    if values.size != k:
        raise ValueError("nodes and values differ in length")
    A = system_matrix(nodes, kind, ridge)
    m = A.shape[0] - k
    sol = _solve(A, np.concatenate([values, np.zeros(m)]))
    return SurrogateModel(nodes, values, kind, sol[:k], sol[k:], ridge)


def distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows through one matrix product.

    Faster than ``cdist`` for large pools. Entries below ``1e-3``, where the
    expansion loses relative accuracy, are recomputed directly.
    """
    sq = A @ B.T
    sq *= -2.0
    sq += np.einsum("ij,ij->i", A, A)[:, None]
    sq += np.einsum("ij,ij->i", B, B)[None, :]
    if sq.size and sq.min() < 1e-6:
        i, j = np.nonzero(sq < 1e-6)
        sq[i, j] = ((A[i] - B[j]) ** 2).sum(axis=1)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq, out=sq)


def surrogate_eval(model: SurrogateModel, x):
    """Interpolant value at one point (returns float) or at rows of a 2-D array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out, _ = eval_with_min_distance(model, np.atleast_2d(x))
    return float(out[0]) if single else out


def eval_with_min_distance(model: SurrogateModel, pts: np.ndarray, chunk: int = 1024):
    """Interpolant values and distance to the nearest node for each row of ``pts``.

    Rows are processed in chunks so the distance matrix stays cache-sized.
    """
    values = np.empty(len(pts))
    nearest = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        block = pts[lo:lo + chunk]
        dist = distances(block, model.nodes)
        nearest[lo:lo + chunk] = dist.min(axis=1)
        values[lo:lo + chunk] = eval_from_distances(model, block, dist)
    return values, nearest


def eval_from_distances(model: SurrogateModel, pts: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Interpolant at the rows of ``pts`` given their precomputed distances to the nodes."""
    out = rbf_value(model.rbf, dist) @ model.lambda_coeffs
    if model.poly_coeffs.size:
        out = out + poly_matrix(pts, model.rbf.degree) @ model.poly_coeffs
    return out


def loo_errors(nodes, values, kind: RbfKind, ridge: float = 0.0) -> np.ndarray:
    """Absolute leave-one-out prediction errors, by refitting without each node."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    k = nodes.shape[0]
    errs = np.empty(k)
    mask = np.ones(k, dtype=bool)
    for i in range(k):
        mask[i] = False
        model = fit_surrogate(nodes[mask], values[mask], kind, ridge)
        errs[i] = abs(surrogate_eval(model, nodes[i]) - values[i])
        mask[i] = True
    return errs


def loo_errors_rippa(nodes, values, kind: RbfKind, ridge: float = 0.0, held_out=None) -> np.ndarray:
    """Absolute leave-one-out errors from one factorization of the full system.

    Removing node ``i`` from the saddle-point system leaves a residual of
    ``z_i / (A^-1)_ii`` at that node, where ``z`` solves the full system.
    ``held_out`` selects the nodes to leave out (default all); every fit
    uses all the other nodes.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    k = nodes.shape[0]
    idx = np.arange(k) if held_out is None else np.asarray(held_out, dtype=int)
    A = system_matrix(nodes, kind, ridge)
    rhs = np.zeros((A.shape[0], 1 + idx.size))
    rhs[:k, 0] = values
    rhs[idx, 1 + np.arange(idx.size)] = 1.0
    sol = _solve(A, rhs)
    diag = sol[idx, 1 + np.arange(idx.size)]
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(sol[idx, 0] / diag)
    # a zero pivot means the reduced system is singular
    return np.where(np.isfinite(err), err, np.inf)


def select_model_loo(nodes, values, kinds=None, current: RbfKind | None = None,
                     ridge: float = 0.0, max_points: int = 50) -> RbfKind:
    """Pick the kernel with the smallest total LOO error on the most recent points.

    Each of the last ``max_points`` nodes is left out in turn and predicted
    from all the others. Kinds that fail to fit are skipped. Ties go to the
    earlier kind in ``kinds``. With too few points, or if every kind fails,
    ``current`` is returned.
    """
    current = current if current is not None else RbfKind()
    kinds = [RbfKind(k) if isinstance(k, str) else k for k in (kinds or KINDS)]
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    count, dim = nodes.shape
    held_out = np.arange(max(count - max_points, 0), count)
    if count < max(kind.tail_size(dim) for kind in kinds) + 2:
        return current
    # errors this close are round-off ties, resolved by table order
    tie = 1e-10 * (1.0 + np.abs(values[held_out]).sum())
    best, best_err = current, np.inf
    for kind in kinds:
        try:
            err = loo_errors_rippa(nodes, values, kind, ridge, held_out).sum()
        except SurrogateFitError:
            continue
        if err < best_err - tie:
            best, best_err = kind, err
    return best

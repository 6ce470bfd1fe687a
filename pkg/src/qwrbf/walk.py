"""Discrete-time quantum walk on the walker (OAM) and coin (polarization) registers.

States live on the full band of positions ``-n..n`` with two coin components,
stored as a ``(2n+1, 2)`` complex array. Coin index 0 is ``|up>`` (identified
with right-circular polarization), index 1 is ``|down>`` (left-circular).
All angles are in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UP = np.array([1.0, 0.0], dtype=complex)
DOWN = np.array([0.0, 1.0], dtype=complex)
HORIZONTAL = (UP + DOWN) / np.sqrt(2)

NULL_PROJECTION_TOL = 1e-12
GS_RESIDUAL_TOL = 1e-10


class BandOverflowError(ValueError):
    """Amplitude would be shifted outside the allocated position band."""


@dataclass(frozen=True)
class CoinAngles:
    """Rotation angles of one QWP-HWP-QWP coin."""

    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.theta1, self.theta2, self.theta3])):
            raise ValueError("coin angles must be finite")

    def reduced(self) -> "CoinAngles":
        two_pi = 2 * np.pi
        return CoinAngles(*(float(np.mod(t, two_pi)) for t in (self.theta1, self.theta2, self.theta3)))


@dataclass(frozen=True)
class WalkParams:
    """Coin angles for every step of an ``n``-step walk.

    With ``first_coin_constrained`` the first coin has only two waveplates and
    ``coins[0].theta1`` is pinned to zero.
    """

    coins: tuple[CoinAngles, ...]
    first_coin_constrained: bool = True

    def __post_init__(self):
        if len(self.coins) < 1:
            raise ValueError("a walk needs at least one step")
        if self.first_coin_constrained and self.coins[0].theta1 != 0.0:
            raise ValueError("first coin is constrained: theta1 must be 0")

    @property
    def steps(self) -> int:
        return len(self.coins)

    @property
    def n_free(self) -> int:
        return 3 * self.steps - int(self.first_coin_constrained)

    @classmethod
    def from_vector(cls, theta: Sequence[float], steps: int, first_coin_constrained: bool = True) -> "WalkParams":
        """Unpack a flat free-parameter vector.

        The constrained layout is ``(t2, t3 | t1, t2, t3 | ...)`` with the first
        step's ``theta1`` omitted.
        """
        theta = np.asarray(theta, dtype=float).ravel()
        expected = param_count(steps) if first_coin_constrained else 3 * steps
        if theta.size != expected:
            raise ValueError(f"expected {expected} parameters for {steps} steps, got {theta.size}")
        full = np.concatenate([[0.0], theta]) if first_coin_constrained else theta
        coins = tuple(CoinAngles(*map(float, full[3 * i : 3 * i + 3])) for i in range(steps))
        return cls(coins, first_coin_constrained)

    def to_vector(self) -> np.ndarray:
        full = np.array([[c.theta1, c.theta2, c.theta3] for c in self.coins]).ravel()
        return full[1:] if self.first_coin_constrained else full


@dataclass
class WalkState:
    """Joint walker/coin amplitudes; row ``k + n`` holds position ``k``."""

    amplitudes: np.ndarray
    n: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2 * self.n + 1, 2):
            raise ValueError(f"amplitudes must have shape {(2 * self.n + 1, 2)}")

    @classmethod
    def localized(cls, n: int, coin: Sequence[complex], position: int = 0) -> "WalkState":
        amps = np.zeros((2 * n + 1, 2), dtype=complex)
        amps[position + n] = np.asarray(coin, dtype=complex)
        return cls(amps, n)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1)

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass
class TargetState:
    """Normalized walker state on the reachable band ``{-n, -n+2, ..., n}``."""

    amplitudes: np.ndarray
    normalize: bool = field(default=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).ravel()
        nrm = np.linalg.norm(a)
        if self.normalize:
            if nrm == 0:
                raise ValueError("cannot normalize a zero vector")
            a = a / nrm
        elif abs(nrm**2 - 1) > 1e-12:
            raise ValueError(f"target state is not normalized (|a|^2 = {nrm ** 2})")
        self.amplitudes = a

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def n(self) -> int:
        return self.dim - 1

    @classmethod
    def basis(cls, m: int, n: int) -> "TargetState":
        """The OAM eigenstate ``|m>`` on the band of an ``n``-step walk."""
        a = np.zeros(n + 1, dtype=complex)
        a[band_index(m, n)] = 1.0
        return cls(a)


@dataclass
class MeasurementBasis:
    vectors: list[TargetState]

    def matrix(self) -> np.ndarray:
        """Rows are the basis vectors."""
        return np.array([v.amplitudes for v in self.vectors])


def band_index(m: int, n: int) -> int:
    """Index of OAM value ``m`` inside the reachable band of an ``n``-step walk."""
    if abs(m) > n or (m - n) % 2:
        raise ValueError(f"m={m} is not reachable in {n} steps")
    return (m + n) // 2


def param_count(steps: int) -> int:
    """Free parameters of a walk whose first coin has only two waveplates."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return 3 * steps - 1


def coin_matrix(angles: CoinAngles) -> np.ndarray:
    t1, t2, t3 = angles.theta1, angles.theta2, angles.theta3
    beta = t1 - t3
    eta = t1 - 2 * t2 + t3
    mu = t1 + t3
    c, s = np.cos(eta), np.sin(eta)
    return np.array(
        [
            [np.exp(-1j * beta) * c, (np.cos(mu) + 1j * np.sin(mu)) * s],
            [(-np.cos(mu) + 1j * np.sin(mu)) * s, np.exp(1j * beta) * c],
        ]
    )


def coin_matrices(angles: np.ndarray) -> np.ndarray:
    """Vectorized :func:`coin_matrix` over an ``(..., 3)`` array of angles."""
    angles = np.asarray(angles, dtype=float)
    t1, t2, t3 = angles[..., 0], angles[..., 1], angles[..., 2]
    beta = t1 - t3
    eta = t1 - 2 * t2 + t3
    mu = t1 + t3
    c, s = np.cos(eta), np.sin(eta)
    out = np.empty(angles.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-1j * beta) * c
    out[..., 0, 1] = np.exp(1j * mu) * s
    out[..., 1, 0] = -np.exp(-1j * mu) * s
    out[..., 1, 1] = np.exp(1j * beta) * c
    return out


def apply_shift(state: WalkState) -> WalkState:
    """(k, up) -> (k-1, down) and (k, down) -> (k+1, up)."""
    a = state.amplitudes
    if a[0, 0] != 0 or a[-1, 1] != 0:
        raise BandOverflowError("shift would move amplitude outside the band")
    out = np.zeros_like(a)
    out[:-1, 1] = a[1:, 0]
    out[1:, 0] = a[:-1, 1]
    return WalkState(out, state.n)


def evolve(params: WalkParams, state: WalkState) -> WalkState:
    """Apply coin then shift for every step, first step first."""
    if state.n < params.steps:
        raise BandOverflowError(f"band half-width {state.n} too small for {params.steps} steps")
    for coin in params.coins:
        c = coin_matrix(coin)
        state = apply_shift(WalkState(state.amplitudes @ c.T, state.n))
    return state


def default_input(n: int) -> WalkState:
    """Walker at 0, horizontal polarization ``(|up> + |down>)/sqrt(2)``."""
    return WalkState.localized(n, HORIZONTAL)


def project_coin(state: WalkState, coin_axis: Sequence[complex] = UP) -> tuple[TargetState | None, float]:
    """Project the coin onto ``coin_axis`` and keep the reachable band.

    Returns ``(None, p)`` when the success probability ``p`` is below
    ``1e-12``; callers treat that as the worst possible outcome.
    """
    axis = np.asarray(coin_axis, dtype=complex)
    walker = state.amplitudes @ axis.conj()
    # positions -n, -n+2, ..., n sit at even array indices
    band = walker[0::2]
    prob = float(np.vdot(band, band).real)
    if prob < NULL_PROJECTION_TOL:
        return None, prob
    return TargetState(band / np.sqrt(prob), normalize=True), prob


def fidelity(a: TargetState, b: TargetState) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def gram_schmidt_basis(target: TargetState) -> MeasurementBasis:
    """Orthonormal basis of the band whose first element is ``target``.

    The remaining directions come from the computational basis seeds
    ``|-n>, |-n+2>, ..., |n>`` in order; seeds that are (numerically) already
    spanned are skipped. Modified Gram-Schmidt with one re-orthogonalization
    pass keeps the Gram matrix at identity to ~1e-15.
    """
    d = target.dim
    vecs = [target.amplitudes.copy()]
    for j in range(d):
        if len(vecs) == d:
            break
        v = np.zeros(d, dtype=complex)
        v[j] = 1.0
        for _ in range(2):
            for u in vecs:
                v = v - np.vdot(u, v) * u
        nrm = np.linalg.norm(v)
        if nrm < GS_RESIDUAL_TOL:
            continue
        vecs.append(v / nrm)
    return MeasurementBasis([target] + [TargetState(v, normalize=True) for v in vecs[1:]])


def random_target(band_dim: int, rng_seed=None) -> TargetState:
    """Haar-random pure state: normalized i.i.d. standard complex Gaussian entries."""
    if band_dim < 2:
        raise ValueError("band_dim must be >= 2")
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal(band_dim) + 1j * rng.standard_normal(band_dim)
    return TargetState(z, normalize=True)

"""Black-box state-generation device with simulated photon counting.

The optimizer only ever sees :meth:`Oracle.cost`. Hidden waveplate offsets
(the perturbation model) live in :class:`DeviceState` and are added to the
proposed angles before the walk is simulated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .walk import (
    HORIZONTAL,
    TargetState,
    WalkParams,
    default_input,
    evolve,
    fidelity,
    gram_schmidt_basis,
    param_count,
    project_coin,
)

DEFAULT_HANDLES = ((2, 2), (3, 1))


@dataclass
class NoiseModel:
    """Poisson-distributed number of trials per projection, then Binomial clicks."""

    lam: float = 1e4
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not self.lam > 0:
            raise ValueError("lambda must be > 0 when noise is enabled")


@dataclass
class PerturbationConfig:
    """Random permanent kicks of selected waveplates.

    ``handles`` are 1-based ``(step, angle)`` pairs, e.g. ``(2, 2)`` is the HWP
    of the second coin. Offsets are in radians.
    """

    probability_q: float = 0.0
    offset_mean: float = np.deg2rad(-30.0)
    offset_std: float = np.deg2rad(5.0)
    handles: tuple[tuple[int, int], ...] = DEFAULT_HANDLES
    enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.probability_q <= 1.0:
            raise ValueError("probability_q must be in [0, 1]")
        if self.offset_std < 0:
            raise ValueError("offset_std must be >= 0")
        self.handles = tuple(tuple(h) for h in self.handles)


@dataclass
class PerturbationEvent:
    evaluation: int
    handle: tuple[int, int]
    offset: float


@dataclass
class DeviceState:
    hidden_offsets: np.ndarray
    event_log: list[PerturbationEvent] = field(default_factory=list)


def handle_index(handle: tuple[int, int], steps: int) -> int:
    """Position of a 1-based ``(step, angle)`` handle in the free-parameter vector."""
    step, angle = handle
    if not (1 <= step <= steps and 1 <= angle <= 3):
        raise ValueError(f"handle {handle} out of range for {steps} steps")
    if step == 1:
        if angle == 1:
            raise ValueError("theta1 of the first coin is not a free parameter")
        return angle - 2
    return 2 + 3 * (step - 2) + (angle - 1)


def simulate_counts(probabilities, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Draw ``c_j ~ Binomial(N_j, p_j)`` with an independent ``N_j ~ Poisson(lam)`` per element."""
    if not noise.lam > 0:
        raise ValueError("lambda must be > 0")
    p = np.clip(np.asarray(probabilities, dtype=float), 0.0, 1.0)
    trials = rng.poisson(noise.lam, size=p.shape)
    return rng.binomial(trials, p)


class Oracle:
    """Simulated apparatus for one target state.

    :param steps: number of walk steps.
    :param target: target walker state on the reachable band.
    :param noise: counting-noise model; ``NoiseModel(enabled=False)`` gives exact fidelities.
    :param perturbation: hidden waveplate kicks applied once per :meth:`cost` call.
    :param seed: anything accepted by :func:`numpy.random.default_rng`.
    :param coin_axis: polarization kept by the final projection. The default is
        horizontal: projecting on ``|up>`` alone can never populate position
        ``-n``, which caps the fidelity of generic targets.
    """

    def __init__(
        self,
        steps: int,
        target: TargetState,
        noise: NoiseModel | None = None,
        perturbation: PerturbationConfig | None = None,
        seed=None,
        coin_axis=HORIZONTAL,
        input_state=None,
    ):
        if target.dim != steps + 1:
            raise ValueError(f"target dimension {target.dim} does not match {steps} steps")
        self.steps = steps
        self.n_params = param_count(steps)
        self.target = target
        self.basis = gram_schmidt_basis(target)
        self._basis_rows = self.basis.matrix()
        self.noise = noise if noise is not None else NoiseModel()
        self.perturbation = perturbation if perturbation is not None else PerturbationConfig()
        self.coin_axis = np.asarray(coin_axis, dtype=complex)
        self.input_state = input_state if input_state is not None else default_input(steps)
        self.device = DeviceState(np.zeros(self.n_params))
        self.rng = np.random.default_rng(seed)
        self.evaluations = 0
        self._handle_idx = (
            [handle_index(h, steps) for h in self.perturbation.handles] if self.perturbation.enabled else []
        )

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        return theta

    def output_state(self, theta) -> TargetState | None:
        """Projected walker state for the proposed angles plus hidden offsets."""
        theta = self._check(theta) + self.device.hidden_offsets
        params = WalkParams.from_vector(theta, self.steps)
        state, _ = project_coin(evolve(params, self.input_state), self.coin_axis)
        return state

    def basis_probabilities(self, theta) -> np.ndarray | None:
        out = self.output_state(theta)
        if out is None:
            return None
        return np.abs(self._basis_rows.conj() @ out.amplitudes) ** 2

    def evaluate_exact(self, theta) -> float:
        """Noiseless fidelity; does not advance the counter or the device."""
        out = self.output_state(theta)
        return 0.0 if out is None else fidelity(self.target, out)

    def estimate_fidelity(self, theta) -> tuple[float, dict]:
        probs = self.basis_probabilities(theta)
        if probs is None:
            return 0.0, {"null_projection": True}
        if not self.noise.enabled:
            return self.evaluate_exact(theta), {"probabilities": probs}
        counts = simulate_counts(probs, self.noise, self.rng)
        total = counts.sum()
        f_hat = float(counts[0] / total) if total > 0 else 0.0
        return f_hat, {"probabilities": probs, "counts": counts}

    def perturb_step(self) -> list[PerturbationEvent]:
        cfg = self.perturbation
        events = []
        for handle, idx in zip(cfg.handles, self._handle_idx):
            if self.rng.random() < cfg.probability_q:
                delta = float(self.rng.normal(cfg.offset_mean, cfg.offset_std))
                self.device.hidden_offsets[idx] += delta
                events.append(PerturbationEvent(self.evaluations, handle, delta))
        self.device.event_log.extend(events)
        return events

    def inject_offset(self, handle: tuple[int, int], delta: float) -> PerturbationEvent:
        """Apply a deterministic kick (used for forced-perturbation experiments)."""
        self.device.hidden_offsets[handle_index(handle, self.steps)] += delta
        event = PerturbationEvent(self.evaluations, tuple(handle), float(delta))
        self.device.event_log.append(event)
        return event

    def cost(self, theta) -> float:
        """One noisy measurement of ``1 - F``.

        The device may be kicked right before measuring, so the measurement at
        evaluation ``i`` is the first to see a perturbation logged at ``i``.
        """
        theta = self._check(theta)
        if self.perturbation.enabled:
            self.perturb_step()
        f_hat, _ = self.estimate_fidelity(theta)
        self.evaluations += 1
        return 1.0 - f_hat

    __call__ = cost

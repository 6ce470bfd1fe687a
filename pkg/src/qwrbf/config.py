"""Experiment configuration, target presets and the per-state perturbation table.

Configs are JSON documents; every angle is given in degrees and unknown keys
are rejected. Targets are written as short strings:

``"|1>"``
    walker basis state ``|m=1>``.
``"SR(-1,1)"`` / ``"SC(-1,1)"``
    ``(|m1> - |m2>)/sqrt2`` and ``(|m1> - i|m2>)/sqrt2``.
``"SUP(-1,1,90)"``
    ``(|m1> + e^{i phi}|m2>)/sqrt2`` with ``phi`` in degrees.
``"random"`` / ``"random:5"``
    one or five Haar-random states, seeded from the master seed.

An explicit state is given as ``{"amplitudes": [[re, im], ...]}`` ordered from
``m = -n`` to ``m = n`` in steps of two.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .walk import TargetState

ExperimentKind = Literal["engineer", "perturb", "sweep", "compare"]
ALGORITHMS = ("rbf", "random", "powell")


class ConfigError(ValueError):
    """Invalid configuration file or target specification."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ExplicitTarget(_Strict):
    amplitudes: list[tuple[float, float]]
    label: Optional[str] = None


TargetEntry = Union[str, ExplicitTarget]


class ForcedOffset(_Strict):
    evaluation: int = Field(ge=0)
    handle: tuple[int, int]
    offset_deg: float


class PerturbationSettings(_Strict):
    q: Optional[float] = Field(default=None, ge=0, le=1)
    mean_deg: float = -30.0
    std_deg: float = Field(default=5.0, ge=0)
    handles: list[tuple[int, int]] = [(2, 2), (3, 1)]
    threshold: Optional[float] = Field(default=None, ge=0)
    check_period: int = Field(default=10, ge=1)
    forced: list[ForcedOffset] = []


class OptimizerSettings(_Strict):
    init_points: Optional[int] = Field(default=None, ge=1)
    num_global_searches: int = Field(default=5, ge=1)
    max_stalled_iterations: int = Field(default=100, ge=1)
    refinement_frequency: int = Field(default=3, ge=1)
    min_distance: float = Field(default=1e-6, gt=0)
    ridge: Optional[float] = Field(default=None, ge=0)
    candidate_pool: Optional[int] = Field(default=None, ge=1)
    model_reselect_period: int = Field(default=25, ge=1)
    kinds: Optional[list[str]] = None
    local_std: Optional[float] = Field(default=None, gt=0)


class SweepSettings(_Strict):
    steps: list[int] = [3, 5, 7, 9]
    targets_per_step: int = Field(default=10, ge=1)
    threshold: float = Field(default=0.98, gt=0, le=1)


class ExperimentConfig(_Strict):
    experiment: ExperimentKind = "engineer"
    steps: int = Field(default=3, ge=1)
    targets: list[TargetEntry] = ["random:5"]
    repeats: int = Field(default=3, ge=1)
    budget: int = Field(default=600, ge=1)
    noise_lambda: float = Field(default=1e4, gt=0)
    noiseless: bool = False
    bounds_deg: tuple[float, float] = (0.0, 180.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    perturbation: PerturbationSettings = PerturbationSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    sweep: SweepSettings = SweepSettings()
    algorithms: list[Literal["rbf", "random", "powell"]] = list(ALGORITHMS)

    @field_validator("targets")
    @classmethod
    def _parse_targets(cls, v):
        if not v:
            raise ValueError("at least one target is required")
        for entry in v:
            if isinstance(entry, str):
                parse_preset(entry)
        return v

    @field_validator("bounds_deg")
    @classmethod
    def _bounds(cls, v):
        if not v[0] < v[1]:
            raise ValueError("bounds_deg needs lo < hi")
        return v

    @model_validator(mode="after")
    def _explicit_dims(self):
        dim = self.steps + 1
        if self.experiment != "sweep":
            for entry in self.targets:
                if isinstance(entry, ExplicitTarget) and len(entry.amplitudes) != dim:
                    raise ValueError(f"explicit target has {len(entry.amplitudes)} amplitudes, steps={self.steps} needs {dim}")
                if isinstance(entry, str):
                    spec = parse_preset(entry)
                    for m in spec.get("m", ()):
                        if abs(m) > self.steps or (m - self.steps) % 2:
                            raise ValueError(f"target {entry!r} is outside the band reachable in {self.steps} steps")
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a JSON config (or start from defaults) and apply non-``None`` overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


_BASIS = re.compile(r"^\|\s*([+-]?\d+)\s*>$")
_PAIR = re.compile(r"^(SR|SC)\(\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*\)$")
_SUP = re.compile(r"^SUP\(\s*([+-]?\d+)\s*,\s*([+-]?\d+)\s*,\s*([+-]?[\d.]+)\s*\)$")
_RANDOM = re.compile(r"^random(?::(\d+))?$")


def parse_preset(text: str) -> dict:
    """Parse a target string into ``{"kind", "m", "phase_deg"}`` (or ``{"kind": "random", "count"}``)."""
    s = text.strip()
    if m := _BASIS.match(s):
        return {"kind": "basis", "m": (int(m[1]),)}
    if m := _PAIR.match(s):
        # SR carries a relative minus sign, SC a relative -i
        phase = 180.0 if m[1] == "SR" else -90.0
        return {"kind": "superposition", "m": (int(m[2]), int(m[3])), "phase_deg": phase}
    if m := _SUP.match(s):
        return {"kind": "superposition", "m": (int(m[1]), int(m[2])), "phase_deg": float(m[3])}
    if m := _RANDOM.match(s):
        count = int(m[1]) if m[1] else 1
        if count < 1:
            raise ConfigError("random target count must be positive")
        return {"kind": "random", "count": count}
    raise ConfigError(f"unrecognised target {text!r}")


def preset_state(spec: dict, steps: int) -> TargetState:
    if spec["kind"] == "basis":
        return TargetState.basis(spec["m"][0], steps)
    m1, m2 = spec["m"]
    if m1 == m2:
        raise ConfigError("superposition needs two distinct basis states")
    amps = TargetState.basis(m1, steps).amplitudes + np.exp(1j * np.deg2rad(spec["phase_deg"])) * TargetState.basis(
        m2, steps
    ).amplitudes
    return TargetState(amps / np.sqrt(2))


def explicit_state(entry: ExplicitTarget) -> TargetState:
    amps = np.array([complex(re_, im) for re_, im in entry.amplitudes])
    try:
        return TargetState(amps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# (q, t) per target, keyed by the canonical preset form
TABLE1 = {
    ("basis", (1,), None): (0.0015, 0.02),
    ("basis", (3,), None): (0.0015, 0.02),
    ("superposition", (-1, 1), 0.0): (0.008, 0.02),
    ("superposition", (-1, 1), 90.0): (0.004, 0.02),
    ("superposition", (-3, 3), 0.0): (0.0015, 0.05),
}
TABLE1_RANDOM = (0.0015, 0.02)


def table1_lookup(spec: Optional[dict]) -> tuple[float, float]:
    """Perturbation probability and restart threshold for a target; unknown targets use the random-state row."""
    if spec is None or spec["kind"] == "random":
        return TABLE1_RANDOM
    phase = spec.get("phase_deg")
    key = (spec["kind"], tuple(spec["m"]), None if phase is None else float(phase) % 360.0)
    return TABLE1.get(key, TABLE1_RANDOM)

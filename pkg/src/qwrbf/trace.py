"""Per-evaluation logs shared by every optimizer."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EVENTS = (
    "none",
    "lhd_init",
    "global",
    "local",
    "refine",
    "stall_restart",
    "degradation_check",
    "degradation_restart",
    "perturbation",
)


@dataclass
class IterationRecord:
    eval: int
    theta: np.ndarray
    cost: float
    best: float
    event: str = "none"
    wall_time: float = 0.0

    def __post_init__(self):
        if self.event not in EVENTS:
            raise ValueError(f"unknown event tag {self.event!r}")

    def to_json(self, theta_scale: float = 1.0) -> dict:
        # wall_time is deliberately not persisted: outputs must be byte-reproducible
        return {
            "eval": self.eval,
            "theta_deg": [float(t) * theta_scale for t in self.theta],
            "cost": float(self.cost),
            "best": float(self.best),
            "event": self.event,
        }


@dataclass
class Trace:
    metadata: dict = field(default_factory=dict)
    records: list[IterationRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def __len__(self):
        return len(self.records)

    def append(self, theta, cost: float, best: float, event: str = "none") -> IterationRecord:
        rec = IterationRecord(
            eval=len(self.records),
            theta=np.array(theta, dtype=float),
            cost=float(cost),
            best=float(best),
            event=event,
            wall_time=time.perf_counter() - self._t0,
        )
        self.records.append(rec)
        return rec

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def best_so_far(self) -> np.ndarray:
        return np.array([r.best for r in self.records])

    @property
    def events(self) -> list[str]:
        return [r.event for r in self.records]

    def best_record(self) -> IterationRecord:
        """Record holding the lowest cost, excluding degradation re-checks."""
        candidates = [r for r in self.records if r.event != "degradation_check"]
        return min(candidates, key=lambda r: r.cost)

    def write_jsonl(self, path, theta_scale: float = 1.0) -> None:
        path = Path(path)
        with path.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(theta_scale)) + "\n")


def read_jsonl(path, theta_scale: float = 1.0) -> Trace:
    trace = Trace()
    with Path(path).open() as fh:
        for line in fh:
            d = json.loads(line)
            trace.records.append(
                IterationRecord(d["eval"], np.asarray(d["theta_deg"]) / theta_scale, d["cost"], d["best"], d["event"])
            )
    return trace

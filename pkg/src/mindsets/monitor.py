"""Longitudinal class-probability trajectories and treated-versus-control summaries."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from mindsets import dfg
from mindsets.errors import MissingTimepoint, NoVisits

AVERAGE_OVER = ("decreasers", "all")


@dataclass(frozen=True)
class Trajectory:
    patient_id: str
    points: tuple  # ((month, (p_class0, p_class1, ...)), ...)
    target_class: int

    def __post_init__(self):
        months = [m for m, _ in self.points]
        if any(b <= a for a, b in zip(months, months[1:])):
            raise ValueError(f"{self.patient_id}: visit months must be strictly increasing")
        for m, p in self.points:
            if abs(math.fsum(p) - 1.0) > 1e-9:
                raise ValueError(f"{self.patient_id}: probabilities at month {m} do not sum to 1")

    @property
    def months(self) -> list[int]:
        return [m for m, _ in self.points]

    def p_target(self, month: int) -> float:
        for m, p in self.points:
            if m == month:
                return float(p[self.target_class])
        raise MissingTimepoint(f"{self.patient_id}: no visit at month {month}")

    def to_dict(self) -> dict:
        return {"patient_id": self.patient_id, "target_class": self.target_class,
                "points": [{"month": m, "probabilities": list(p)} for m, p in self.points]}


def trajectory(model, rows_by_visit: Mapping[int, Sequence[float]], target_class: int,
               patient_id: str = "") -> Trajectory:
    """Score each visit row (already preprocessed) and order the points by month."""
    if not rows_by_visit:
        raise NoVisits(f"{patient_id or 'patient'} has no visits")
    months = sorted(int(m) for m in rows_by_visit)
    X = np.array([np.asarray(rows_by_visit[m], dtype=np.float64) for m in months])
    probs = dfg.predict_proba(model, X) if isinstance(model, dfg.DfgModel) else np.asarray(model(X))
    if not 0 <= target_class < probs.shape[1]:
        raise ValueError(f"target class {target_class} outside 0..{probs.shape[1] - 1}")
    return Trajectory(patient_id, tuple((m, tuple(float(v) for v in p)) for m, p in zip(months, probs)),
                      int(target_class))


def from_probabilities(patient_id: str, p_target_by_month: Mapping, n_classes: int = 2,
                       target_class: int = 0) -> Trajectory:
    """Trajectory from target-class probabilities alone; the remainder goes to one other class."""
    points = []
    for m in sorted(int(k) for k in p_target_by_month):
        p = float(p_target_by_month[m] if m in p_target_by_month else p_target_by_month[str(m)])
        vec = [0.0] * n_classes
        vec[target_class] = p
        vec[(target_class + 1) % n_classes] = 1.0 - p
        points.append((m, tuple(vec)))
    return Trajectory(patient_id, tuple(points), target_class)


def decrease(traj: Trajectory, horizon: int) -> float:
    """P(target) at month 0 minus P(target) at the horizon."""
    return traj.p_target(0) - traj.p_target(horizon)


@dataclass(frozen=True)
class ArmSummary:
    n: int
    n_decreased: int
    mean_decrease_pct: float

    def as_tuple(self) -> tuple:
        return (self.n, self.n_decreased, self.mean_decrease_pct)


@dataclass(frozen=True)
class CohortTreatmentReport:
    horizon_months: int
    target_class: int
    treated: ArmSummary
    control: ArmSummary
    average_over: str = "decreasers"

    def to_dict(self) -> dict:
        return {
            "horizon_months": self.horizon_months,
            "target_class": self.target_class,
            "average_over": self.average_over,
            "treated": vars(self.treated),
            "control": vars(self.control),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _summarise(trajectories: Sequence[Trajectory], horizon: int, average_over: str) -> ArmSummary:
    drops = sorted(decrease(t, horizon) for t in trajectories)
    dec = [d for d in drops if d > 0]
    pool = dec if average_over == "decreasers" else drops
    mean = 100.0 * math.fsum(pool) / len(pool) if pool else 0.0
    return ArmSummary(len(drops), len(dec), mean)


def cohort_report(treated: Sequence[Trajectory], control: Sequence[Trajectory], target_class: int,
                  horizon: int, average_over: str = "decreasers") -> CohortTreatmentReport:
    """Count patients whose target probability fell strictly between month 0 and ``horizon``.

    The mean decrease (in percentage points) is taken over the decreasing
    patients by default, or over every patient with ``average_over="all"``.
    """
    if average_over not in AVERAGE_OVER:
        raise ValueError(f"average_over must be one of {AVERAGE_OVER}")
    for t in (*treated, *control):
        if t.target_class != target_class:
            raise ValueError(f"{t.patient_id}: trajectory targets class {t.target_class}, not {target_class}")
        t.p_target(0)
        t.p_target(horizon)
    return CohortTreatmentReport(horizon, target_class, _summarise(treated, horizon, average_over),
                                 _summarise(control, horizon, average_over), average_over)


def trajectories_csv(arms: Mapping[str, Sequence[Trajectory]]) -> str:
    """``arm,patient_id,month,p_target`` rows for plotting."""
    buf = io.StringIO()
    buf.write("arm,patient_id,month,p_target\n")
    for arm in sorted(arms):
        for t in sorted(arms[arm], key=lambda t: t.patient_id):
            for m, p in t.points:
                buf.write(f"{arm},{t.patient_id},{m},{float(p[t.target_class])!r}\n")
    return buf.getvalue()

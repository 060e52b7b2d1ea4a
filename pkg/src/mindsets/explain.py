"""Permutation feature importance and its breakdown by scan timepoint and structure."""
from __future__ import annotations

import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from mindsets import dfg
from mindsets.errors import DimMismatch, UnparseableName
from mindsets.evaluation import macro_auc

MULTI_OMICS = "multi-omics"
RADIOMICS_NAME = re.compile(r"^s(?P<structure>\d+)_(?P<feature>.+)_m(?P<month>0|3|12)$")
RADIOMICS_PREFIX = re.compile(r"^s\d+_")


@dataclass
class FeatureImportance:
    name: str
    mean: float
    std: float
    repeats: int


@dataclass
class ImportanceReport:
    features: list[FeatureImportance]
    metric: str
    baseline: float
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "baseline": self.baseline,
            "seed": self.seed,
            "features": [vars(f) for f in self.features],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def as_dict(self) -> dict[str, float]:
        return {f.name: f.mean for f in self.features}


def _score(metric: str, probs: np.ndarray, labels: np.ndarray) -> float:
    if metric == "accuracy":
        return float(np.mean(probs.argmax(axis=1) == labels))
    if metric == "auc":
        return macro_auc(probs, labels)
    raise ValueError(f"unknown metric {metric!r}")


def permutation_rng(seed: int, feature: int, repeat: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, feature, repeat])))


def permutation_importance(model, matrix, labels, metric: str = "accuracy", repeats: int = 5,
                           seed: int = 0, feature_names: Sequence[str] | None = None) -> ImportanceReport:
    """Baseline metric minus the mean metric after shuffling one column at a time.

    ``model`` is a DfgModel or any callable mapping a matrix to class probabilities.
    Column ``f`` on repeat ``r`` is shuffled with its own Philox stream keyed by
    ``(seed, f, r)``, so results do not depend on evaluation order.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels)
    if isinstance(model, dfg.DfgModel):
        if X.shape[1] != model.input_dim:
            raise DimMismatch(f"model expects {model.input_dim} columns, got {X.shape[1]}")

        def predict(m):
            return dfg.predict_proba(model, m)
    else:
        predict: Callable = model
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise DimMismatch("feature_names and matrix columns disagree")
    baseline = _score(metric, predict(X), y)
    out = []
    for j, name in enumerate(names):
        scores = []
        for r in range(repeats):
            shuffled = X.copy()
            shuffled[:, j] = X[permutation_rng(seed, j, r).permutation(len(X)), j]
            scores.append(_score(metric, predict(shuffled), y))
        scores = np.array(scores)
        out.append(FeatureImportance(name, float(baseline - math.fsum(scores) / repeats),
                                     float(scores.std()), repeats))
    return ImportanceReport(out, metric, baseline, seed)


def parse_feature_name(name: str, default_month: int | None = None) -> tuple[str, str]:
    """``(timepoint group, structure group)`` of one column.

    Radiomics columns look like ``s<label>_<feature>_m<month>``; columns without
    the ``s<label>_`` prefix belong to the multi-omics group.
    """
    m = RADIOMICS_NAME.match(name)
    if m:
        return f"m{m['month']}", f"s{m['structure']}"
    if RADIOMICS_PREFIX.match(name):
        if default_month is not None:
            return f"m{default_month}", name.split("_", 1)[0]
        raise UnparseableName(f"radiomics column {name!r} lacks a _m0/_m3/_m12 suffix")
    return MULTI_OMICS, MULTI_OMICS


@dataclass
class GroupedImportance:
    by_timepoint: dict
    by_structure: dict
    total: float

    def to_dict(self) -> dict:
        return {"by_timepoint": self.by_timepoint, "by_structure": self.by_structure, "total": self.total}


def _group_order(key: str) -> tuple:
    m = re.match(r"^[ms](\d+)$", key)
    return (0, int(m.group(1)), "") if m else (1, 0, key)


def group_by_timepoint(report, parser: Callable[[str], tuple[str, str]] | None = None) -> GroupedImportance:
    """Sum importances per scan timepoint and per structure; tabular columns form ``multi-omics``."""
    parser = parser or parse_feature_name
    items = report.as_dict() if isinstance(report, ImportanceReport) else dict(report)
    by_time: dict[str, list[float]] = {}
    by_struct: dict[str, list[float]] = {}
    for name, value in items.items():
        t, s = parser(name)
        by_time.setdefault(t, []).append(value)
        by_struct.setdefault(s, []).append(value)

    def total(groups):
        return {k: math.fsum(groups[k]) for k in sorted(groups, key=_group_order)}

    return GroupedImportance(total(by_time), total(by_struct), math.fsum(items.values()))


def plot_data_csv(report: ImportanceReport, parser: Callable[[str], tuple[str, str]] | None = None) -> str:
    """``feature,timepoint,structure,importance,std`` rows for external plotting."""
    parser = parser or parse_feature_name
    rows = []
    for f in report.features:
        t, s = parser(f.name)
        rows.append({"feature": f.name, "timepoint": t, "structure": s, "importance": f.mean, "std": f.std})
    buf = io.StringIO()
    pd.DataFrame(rows, columns=["feature", "timepoint", "structure", "importance", "std"]).to_csv(
        buf, index=False, float_format="%.17g", lineterminator="\n")
    return buf.getvalue()

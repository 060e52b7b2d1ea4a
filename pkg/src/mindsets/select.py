"""Multicollinearity reduction: correlated-pair elimination ranked by mutual information."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mindsets.errors import LengthMismatch, SingleClass


def equal_frequency_bins(x, bins: int = 10) -> np.ndarray:
    """Bin index per value from its rank: ``floor(bins * #{x_j < x_i} / n)``.

    Ties always share a bin, and any strictly increasing transform of ``x``
    leaves the binning unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    below = np.searchsorted(np.sort(x), x, side="left")
    return np.minimum(bins - 1, (bins * below) // n).astype(np.int64)


def _plugin_mi(a: np.ndarray, b: np.ndarray) -> float:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= len(a)
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / np.outer(pa, pb)[nz])).sum())
    return max(mi, 0.0)


def mutual_information(x, y, bins: int = 10, categorical: bool = False) -> float:
    """Plug-in mutual information (nats) between a column and class labels.

    Continuous columns are discretized into equal-frequency bins; categorical
    columns are used as-is. A column with a single distinct value scores 0.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) != len(y):
        raise LengthMismatch(f"column has {len(x)} rows, labels {len(y)}")
    if len(np.unique(y)) < 2:
        raise SingleClass("mutual information needs at least two classes")
    if len(np.unique(x)) < 2:
        return 0.0
    codes = x if categorical else equal_frequency_bins(x, bins)
    return _plugin_mi(codes, y)


def correlation(a, b) -> float:
    """Pearson correlation; 0 when either column is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b):
        raise LengthMismatch(f"columns differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("correlation needs at least two rows")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


def correlation_matrix(matrix) -> np.ndarray:
    """Pairwise Pearson correlations of the columns, with the constant-column rule."""
    X = np.asarray(matrix, dtype=np.float64)
    D = X - X.mean(axis=0)
    norms = np.sqrt((D * D).sum(axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    Z = D / safe
    Z[:, norms == 0] = 0.0
    return np.clip(Z.T @ Z, -1.0, 1.0)


@dataclass
class SelectionResult:
    kept: list[str]
    dropped: list[tuple[str, str, str]]  # (feature, reason, rival)
    scores: dict[str, float]
    degenerate: list[str] = field(default_factory=list)
    threshold: float = 0.7

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "kept": self.kept,
            "dropped": [{"feature": f, "reason": r, "rival": v} for f, r, v in self.dropped],
            "scores": self.scores,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(
            kept=list(d["kept"]),
            dropped=[(x["feature"], x["reason"], x["rival"]) for x in d["dropped"]],
            scores={k: float(v) for k, v in d["scores"].items()},
            degenerate=list(d.get("degenerate", [])),
            threshold=float(d.get("threshold", 0.7)),
        )


def sulov_select(matrix, labels, feature_names: Sequence[str], corr_threshold: float = 0.70,
                 mi_bins: int = 10, categorical: Sequence[str] = ()) -> SelectionResult:
    """Drop the less target-informative member of every pair with |corr| above the threshold.

    Repeats on the survivors until no pair exceeds the threshold. Ties in mutual
    information drop the lexicographically larger name. ``kept`` is ordered by
    descending mutual information (name as tie-break).
    """
    X = np.asarray(matrix, dtype=np.float64)
    names = list(feature_names)
    if X.ndim != 2 or X.shape[1] != len(names):
        raise LengthMismatch("matrix columns and feature names disagree")
    if len(names) == 0:
        raise ValueError("need at least one feature")
    cat = set(categorical)
    scores = {n: mutual_information(X[:, j], labels, mi_bins, n in cat) for j, n in enumerate(names)}
    degenerate = [n for j, n in enumerate(names) if len(np.unique(X[:, j])) < 2]

    alive = list(range(len(names)))
    dropped: list[tuple[str, str, str]] = []
    while True:
        C = np.abs(correlation_matrix(X[:, alive]))
        ii, jj = np.nonzero(np.triu(C > corr_threshold, k=1))
        if len(ii) == 0:
            break
        rival: dict[int, tuple[float, str]] = {}
        for a, b in zip(ii, jj):
            fa, fb = alive[a], alive[b]
            na, nb = names[fa], names[fb]
            if scores[na] != scores[nb]:
                loser, winner = (fa, fb) if scores[na] < scores[nb] else (fb, fa)
            else:
                loser, winner = (fa, fb) if na > nb else (fb, fa)
            c = float(C[a, b])
            best = rival.get(loser)
            # strongest correlated winner is reported; name breaks ties
            if best is None or c > best[0] or (c == best[0] and names[winner] < best[1]):
                rival[loser] = (c, names[winner])
        for loser in sorted(rival, key=lambda f: names[f]):
            c, win = rival[loser]
            dropped.append((names[loser], f"|corr|={c:.6f} > {corr_threshold}", win))
        alive = [f for f in alive if f not in rival]

    kept = sorted((names[f] for f in alive), key=lambda n: (-scores[n], n))
    return SelectionResult(kept, dropped, scores, degenerate, float(corr_threshold))


def truncate_top_k(result: SelectionResult, k: int) -> list[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return list(result.kept[:k])

"""Patient-grouped cross-validation, classification metrics and the experiment matrix."""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from mindsets import dfg
from mindsets.errors import LengthMismatch, ModelVersionMismatch, SingleClass, TooFewGroups
from mindsets.radiomics.extract import RadiomicsFragment
from mindsets.select import sulov_select, truncate_top_k
from mindsets.tabular import (
    CATEGORICAL,
    CLASSES,
    FeatureTable,
    PatientRecord,
    PreprocessState,
    apply_preprocess,
    fit_preprocess,
    fuse,
    is_radiomics_column,
)

CLASS_FILTERS = {
    "AD_vs_CTL": ("AD", "CTL"),
    "AD_vs_MCI": ("AD", "MCI"),
    "MCI_vs_CTL": ("MCI", "CTL"),
    "AD_vs_VaD": ("AD", "VaD"),
    "all_4": CLASSES,
}
MODALITIES = ("mri", "multiomics")
TIMEPOINTS = ("all", "month0")
METRIC_NAMES = ("accuracy", "f1", "recall", "precision", "auc")


def digest(obj) -> str:
    """sha256 of the canonical JSON encoding."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict  # patient id -> fold index

    def test_patients(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.assignments.items() if f == fold)

    def fold_of(self, groups) -> np.ndarray:
        return np.array([self.assignments[str(g)] for g in groups], dtype=np.int64)

    def digest(self) -> str:
        return digest({"k": self.k, "assignments": self.assignments})


def group_kfold(patient_ids, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle the distinct patients with the seed, then deal them round-robin into k folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    unique = sorted({str(p) for p in patient_ids})
    if len(unique) < k:
        raise TooFewGroups(f"{len(unique)} patients cannot fill {k} folds")
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(len(unique))
    return FoldPlan(k, {unique[j]: pos % k for pos, j in enumerate(order)})


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    f1: float
    recall: float
    precision: float
    auc: float  # NaN when no class has both positives and negatives

    def to_dict(self) -> dict:
        return asdict(self)


def roc_auc(scores, binary_labels) -> float:
    """Mann-Whitney AUC: P(score of a random positive > a random negative), ties count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(binary_labels).astype(bool)
    if len(s) != len(y):
        raise LengthMismatch(f"{len(s)} scores for {len(y)} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("roc_auc needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks, exact halves
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def macro_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """One-vs-rest AUC averaged over classes that have both positives and negatives here."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape[1] == 2:
        if len(np.unique(labels)) < 2:
            return math.nan
        return roc_auc(scores[:, 1], labels == 1)
    values = [roc_auc(scores[:, c], labels == c) for c in range(scores.shape[1])
              if 0 < np.sum(labels == c) < len(labels)]
    return float(np.mean(values)) if values else math.nan


def metrics(predicted_labels, true_labels, scores=None) -> MetricSet:
    """Accuracy plus macro precision/recall/F1 (0/0 counts as 0) and macro one-vs-rest AUC.

    Macro averages run over the classes occurring in either the truth or the
    predictions. ``scores`` holds per-class probabilities with columns indexed by
    class code; without it AUC is NaN.
    """
    pred = np.asarray(predicted_labels)
    true = np.asarray(true_labels)
    if len(pred) != len(true):
        raise LengthMismatch(f"{len(pred)} predictions for {len(true)} labels")
    if len(true) == 0:
        raise ValueError("no rows to score")
    precision, recall, f1 = [], [], []
    for c in np.unique(np.concatenate([true, pred])):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    if scores is not None:
        scores = np.asarray(scores, dtype=np.float64)
        if len(scores) != len(true):
            raise LengthMismatch("scores and labels differ in length")
        auc = macro_auc(scores, true)
    else:
        auc = math.nan
    return MetricSet(float(np.mean(pred == true)), float(np.mean(f1)), float(np.mean(recall)),
                     float(np.mean(precision)), auc)


def mean_metrics(folds: Sequence[MetricSet]) -> MetricSet:
    """Arithmetic mean per metric; AUC averages the folds where it is defined."""
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(m, name) for m in folds if not math.isnan(getattr(m, name))]
        out[name] = math.fsum(vals) / len(vals) if vals else math.nan
    return MetricSet(**out)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    class_filter: str = "AD_vs_CTL"
    modality: str = "multiomics"
    timepoints: str = "all"
    dfg_enabled: bool = True
    seed: int = 0
    k: int = 5
    layout: str = "wide_all_visits"  # row layout for timepoints == "all"

    def __post_init__(self):
        if self.class_filter not in CLASS_FILTERS:
            raise ValueError(f"unknown class filter {self.class_filter!r}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.timepoints not in TIMEPOINTS:
            raise ValueError(f"unknown timepoints {self.timepoints!r}")
        if self.layout not in ("wide_all_visits", "per_visit"):
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def classes(self) -> tuple[str, ...]:
        return CLASS_FILTERS[self.class_filter]

    @property
    def name(self) -> str:
        return f"{self.class_filter}__{self.modality}__{self.timepoints}__{'dfg' if self.dfg_enabled else 'nodfg'}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


def experiment_matrix(seed: int = 0, dfg_variants: Sequence[bool] = (True,)) -> list[ExperimentSpec]:
    """Every class filter x modality x timepoint set (x DFG on/off)."""
    return [ExperimentSpec(c, m, t, d, seed) for c in CLASS_FILTERS for m in MODALITIES
            for t in TIMEPOINTS for d in dfg_variants]


@dataclass(frozen=True)
class ExperimentSettings:
    """Model and selection settings shared by every experiment of a run."""
    dfg: dfg.DfgConfig = field(default_factory=dfg.DfgConfig)
    corr_threshold: float = 0.70
    mi_bins: int = 10
    top_k: int | None = None

    def to_dict(self) -> dict:
        return {"dfg": self.dfg.to_dict(), "corr_threshold": self.corr_threshold,
                "mi_bins": self.mi_bins, "top_k": self.top_k}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSettings":
        return cls(dfg.DfgConfig.from_dict(d.get("dfg", {})), float(d.get("corr_threshold", 0.70)),
                   int(d.get("mi_bins", 10)), d.get("top_k"))


@dataclass
class Cohort:
    records: list[PatientRecord]
    fragments: list[tuple[str, int, RadiomicsFragment]]


@dataclass
class EvalReport:
    spec: ExperimentSpec
    classes: list[str]
    folds: list[MetricSet]
    mean: MetricSet
    fold_plan_digest: str
    config_digest: str
    n_rows: int
    n_features: int
    selected_per_fold: list[int]
    averaging: str = "macro"

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "name": self.spec.name,
            "classes": self.classes,
            "averaging": self.averaging,
            "folds": [m.to_dict() for m in self.folds],
            "mean": self.mean.to_dict(),
            "fold_plan_digest": self.fold_plan_digest,
            "config_digest": self.config_digest,
            "n_rows": self.n_rows,
            "n_features": self.n_features,
            "selected_per_fold": self.selected_per_fold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def build_table(cohort: Cohort, spec: ExperimentSpec) -> FeatureTable:
    """Feature table for one experiment: class filter, timepoint layout and modality applied."""
    keep = set(spec.classes)
    records = [r for r in cohort.records if r.diagnosis in keep]
    patients = {r.patient_id for r in records}
    frags = [f for f in cohort.fragments if f[0] in patients]
    if spec.timepoints == "month0":
        records = [r for r in records if r.visit_month == 0]
        patients = {r.patient_id for r in records}
        frags = [f for f in frags if f[1] == 0 and f[0] in patients]
        table = fuse(frags, records, layout="per_visit")
    else:
        months = sorted({int(f[1]) for f in frags} | {r.visit_month for r in records})
        table = fuse(frags, records, layout=spec.layout, visits=months)
    if spec.modality == "mri":
        table = table.subset(columns=[c for c in table.feature_names if is_radiomics_column(c)])
    # columns that no row can fill carry no information
    usable = [c for c in table.feature_names if table.frame[c].notna().any()]
    return table.subset(columns=usable)


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1, dtype=np.uint32)[0])


def run_experiment(cohort: Cohort, spec: ExperimentSpec,
                   settings: ExperimentSettings | None = None, config_digest: str = "") -> EvalReport:
    """Grouped k-fold evaluation with preprocessing, selection and training refit on each fold."""
    settings = settings or ExperimentSettings()
    table = build_table(cohort, spec)
    classes = [c for c in CLASSES if c in spec.classes]
    present = set(table.labels)
    missing = [c for c in classes if c not in present]
    if missing:
        raise SingleClass(f"cohort lacks classes {missing} required by {spec.class_filter}")
    plan = group_kfold(table.groups, spec.k, spec.seed)
    fold_of = plan.fold_of(table.groups)
    cfg = replace(settings.dfg, n_classes=len(classes), use_dfg=spec.dfg_enabled)

    folds, selected = [], []
    for fold in range(spec.k):
        train_mask = fold_of != fold
        state = fit_preprocess(table, train_mask, classes)
        X_train, y_train, g_train = apply_preprocess(table.subset(train_mask), state,
                                                     allow_class_imputation=True)
        X_test, y_test, _ = apply_preprocess(table.subset(~train_mask), state)
        categorical = [c for c in state.columns if state.kinds[c] == CATEGORICAL]
        sel = sulov_select(X_train, y_train, state.columns, settings.corr_threshold,
                           settings.mi_bins, categorical)
        kept = truncate_top_k(sel, settings.top_k) if settings.top_k else sel.kept
        idx = [state.columns.index(c) for c in kept]
        model, _ = dfg.train(X_train[:, idx], y_train, g_train,
                             replace(cfg, seed=fold_seed(spec.seed, fold)))
        probs = dfg.predict_proba(model, X_test[:, idx])
        folds.append(metrics(probs.argmax(axis=1), y_test, probs))
        selected.append(len(idx))
    return EvalReport(spec, classes, folds, mean_metrics(folds), plan.digest(), config_digest,
                      len(table), len(table.feature_names), selected)


BUNDLE_FORMAT = "mindsets-bundle"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    """A model fitted on every row of one experiment, with what is needed to score new rows."""
    spec: ExperimentSpec
    classes: list[str]
    state: PreprocessState
    selected: list[str]
    model: dfg.DfgModel
    config_digest: str = ""

    @property
    def per_visit(self) -> bool:
        """True when the model scores one visit per row (needed for trajectories)."""
        return self.spec.timepoints == "month0" or self.spec.layout == "per_visit"

    def matrix(self, table: FeatureTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Preprocess ``table`` with the fitted state and keep the selected columns."""
        X, y, groups = apply_preprocess(table, self.state)
        idx = [self.state.columns.index(c) for c in self.selected]
        return X[:, idx], y, groups

    def to_dict(self) -> dict:
        return {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "spec": self.spec.to_dict(),
                "classes": self.classes, "preprocess": self.state.to_dict(), "selected": self.selected,
                "model": self.model.to_dict(), "config_digest": self.config_digest}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != BUNDLE_FORMAT or d.get("version") != BUNDLE_VERSION:
            raise ModelVersionMismatch(
                f"expected {BUNDLE_FORMAT} v{BUNDLE_VERSION}, got {d.get('format')} v{d.get('version')}")
        return cls(ExperimentSpec.from_dict(d["spec"]), list(d["classes"]),
                   PreprocessState.from_dict(d["preprocess"]), list(d["selected"]),
                   dfg.DfgModel.from_dict(d["model"]), d.get("config_digest", ""))


def fit_final(cohort: Cohort, spec: ExperimentSpec, settings: ExperimentSettings | None = None,
              config_digest: str = "") -> ModelBundle:
    """Preprocess, select and train on every row of the experiment (no held-out fold)."""
    settings = settings or ExperimentSettings()
    table = build_table(cohort, spec)
    classes = [c for c in CLASSES if c in spec.classes]
    missing = [c for c in classes if c not in set(table.labels)]
    if missing:
        raise SingleClass(f"cohort lacks classes {missing} required by {spec.class_filter}")
    state = fit_preprocess(table, np.ones(len(table), dtype=bool), classes)
    X, y, groups = apply_preprocess(table, state, allow_class_imputation=True)
    categorical = [c for c in state.columns if state.kinds[c] == CATEGORICAL]
    sel = sulov_select(X, y, state.columns, settings.corr_threshold, settings.mi_bins, categorical)
    kept = truncate_top_k(sel, settings.top_k) if settings.top_k else sel.kept
    idx = [state.columns.index(c) for c in kept]
    cfg = replace(settings.dfg, n_classes=len(classes), use_dfg=spec.dfg_enabled, seed=spec.seed)
    model, _ = dfg.train(X[:, idx], y, groups, cfg)
    return ModelBundle(spec, classes, state, list(kept), model, config_digest)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.4f}"


def scenario_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Metrics by class filter and modality, with one column per timepoint scenario."""
    rows: dict[tuple, dict] = {}
    for r in reports:
        s = r.spec
        for metric in METRIC_NAMES:
            key = (s.class_filter, s.modality, "dfg" if s.dfg_enabled else "nodfg", metric)
            rows.setdefault(key, {})[s.timepoints] = getattr(r.mean, metric)
    out = [dict(class_filter=k[0], modality=k[1], model=k[2], metric=k[3],
                all_visits=v.get("all", math.nan), month0=v.get("month0", math.nan))
           for k, v in rows.items()]
    return pd.DataFrame(out, columns=["class_filter", "modality", "model", "metric", "all_visits", "month0"])


def ablation_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """With/without DFG comparison for every scenario that ran both variants."""
    pairs: dict[tuple, dict] = {}
    for r in reports:
        s = r.spec
        pairs.setdefault((s.class_filter, s.modality, s.timepoints, s.seed), {})[s.dfg_enabled] = r
    out = []
    for (cf, mod, tp, _), v in pairs.items():
        if True in v and False in v:
            for metric in METRIC_NAMES:
                a, b = getattr(v[True].mean, metric), getattr(v[False].mean, metric)
                out.append(dict(class_filter=cf, modality=mod, timepoints=tp, metric=metric,
                                with_dfg=a, without_dfg=b, delta=a - b))
    return pd.DataFrame(out, columns=["class_filter", "modality", "timepoints", "metric",
                                      "with_dfg", "without_dfg", "delta"])


def to_csv_text(frame: pd.DataFrame) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    return buf.getvalue()


def text_table(frame: pd.DataFrame) -> str:
    cells = [[str(c) for c in frame.columns]]
    for row in frame.itertuples(index=False):
        cells.append([_fmt(v) if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells) + "\n"

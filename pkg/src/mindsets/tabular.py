"""Cohort records, multi-omics fusion and leakage-free preprocessing."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from mindsets.errors import (
    ClassAbsent,
    DuplicateFragment,
    EmptyTrainSet,
    InvalidCohort,
    UnknownPatient,
    WrongItemCount,
)
from mindsets.radiomics.extract import RadiomicsFragment

CLASSES = ("AD", "VaD", "MCI", "CTL")
VISITS = (0, 3, 12)
CONTINUOUS, CATEGORICAL = "continuous", "categorical"
ID_COLUMNS = ("patient_id", "visit_month", "diagnosis")

# 0-based positions of registration (items 11-13) and delayed recall (items 19-21)
# in the standard 30-item MMSE ordering; see docs/formats.md for the full table.
MMSE_REGISTRATION = (10, 11, 12)
MMSE_RECALL = (18, 19, 20)
MMSE_MEMORY_ITEMS = MMSE_REGISTRATION + MMSE_RECALL
MMSE_ITEM_COLUMNS = tuple(f"mmse_item_{i:02d}" for i in range(1, 31))


def split_mmse(item_scores: Sequence[int]) -> tuple[int, int]:
    """Split 30 binary MMSE item marks into (memory, processing) sub-scores."""
    items = list(item_scores)
    if len(items) != 30:
        raise WrongItemCount(f"MMSE needs 30 item marks, got {len(items)}")
    if any(v not in (0, 1) for v in items):
        raise ValueError("MMSE item marks must be 0 or 1")
    memory = sum(items[i] for i in MMSE_MEMORY_ITEMS)
    return int(memory), int(sum(items) - memory)


@dataclass
class PatientRecord:
    patient_id: str
    visit_month: int
    diagnosis: str
    clinical: dict = field(default_factory=dict)
    genotype: dict = field(default_factory=dict)
    mmse_memory: int | None = None
    mmse_processing: int | None = None

    def __post_init__(self):
        if self.diagnosis not in CLASSES:
            raise InvalidCohort(f"{self.patient_id}: unknown diagnosis {self.diagnosis!r}")
        if self.mmse_memory is not None and not 0 <= self.mmse_memory <= 6:
            raise InvalidCohort(f"{self.patient_id}: mmse_memory out of range")
        if self.mmse_processing is not None and not 0 <= self.mmse_processing <= 24:
            raise InvalidCohort(f"{self.patient_id}: mmse_processing out of range")

    def tabular_values(self) -> dict:
        out = {**self.clinical, **self.genotype}
        if self.mmse_memory is not None:
            out["mmse_memory"] = self.mmse_memory
        if self.mmse_processing is not None:
            out["mmse_processing"] = self.mmse_processing
        return out


@dataclass
class FeatureTable:
    """Rows keyed by patient (and visit for the per-visit layout).

    ``frame`` holds the id columns followed by the feature columns; continuous
    cells are floats (NaN = missing), categorical cells are strings or None.
    """

    frame: pd.DataFrame
    kinds: dict  # feature column -> kind, in column order

    @property
    def feature_names(self) -> list[str]:
        return list(self.kinds)

    @property
    def labels(self) -> np.ndarray:
        return self.frame["diagnosis"].to_numpy()

    @property
    def groups(self) -> np.ndarray:
        return self.frame["patient_id"].to_numpy()

    def __len__(self) -> int:
        return len(self.frame)

    def subset(self, rows=None, columns: Iterable[str] | None = None) -> "FeatureTable":
        frame = self.frame
        if rows is not None:
            frame = frame[np.asarray(rows)] if np.asarray(rows).dtype == bool else frame.iloc[list(rows)]
        kinds = self.kinds if columns is None else {c: self.kinds[c] for c in columns}
        keep = [c for c in frame.columns if c in ID_COLUMNS] + list(kinds)
        return FeatureTable(frame[keep].reset_index(drop=True), dict(kinds))

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False, float_format="%.17g")


def is_radiomics_column(name: str) -> bool:
    return re.match(r"^s\d+_", name) is not None


# ---------------------------------------------------------------------------
# Cohort CSV
# ---------------------------------------------------------------------------

def load_cohort(csv_path, schema_path=None) -> list[PatientRecord]:
    """Read a cohort CSV (one row per patient visit) with its JSON kind schema.

    Columns ``mmse_item_01`` .. ``mmse_item_30`` are collapsed into the memory and
    processing sub-scores. Without a schema, numeric columns are continuous and
    everything else categorical.
    """
    csv_path = Path(csv_path)
    if schema_path is None:
        candidate = csv_path.with_suffix(".schema.json")
        schema_path = candidate if candidate.exists() else None
    schema = json.loads(Path(schema_path).read_text())["columns"] if schema_path else {}
    df = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    missing = [c for c in ID_COLUMNS if c not in df.columns]
    if missing:
        raise InvalidCohort(f"{csv_path}: missing required columns {missing}")

    extra = [c for c in df.columns if c not in ID_COLUMNS and c not in MMSE_ITEM_COLUMNS]
    kinds = {}
    for col in extra:
        spec = schema.get(col, {})
        kind = spec.get("kind") if isinstance(spec, dict) else spec
        if kind is None:
            numeric = pd.to_numeric(df[col].replace("", np.nan), errors="coerce")
            kind = CONTINUOUS if numeric.notna().sum() == (df[col] != "").sum() else CATEGORICAL
        kinds[col] = kind
    groups = {c: (schema.get(c, {}).get("group", "clinical") if isinstance(schema.get(c), dict) else "clinical")
              for c in extra}
    has_items = all(c in df.columns for c in MMSE_ITEM_COLUMNS)

    records = []
    for row in df.to_dict("records"):
        clinical, genotype = {}, {}
        mem = proc = None
        for col in extra:
            raw = row[col]
            if col in ("mmse_memory", "mmse_processing"):
                if raw != "":
                    if col == "mmse_memory":
                        mem = int(float(raw))
                    else:
                        proc = int(float(raw))
                continue
            if kinds[col] == CONTINUOUS:
                value = float(raw) if raw != "" else math.nan
            else:
                value = raw if raw != "" else None
            (genotype if groups[col] == "genotype" else clinical)[col] = value
        if has_items and all(row[c] != "" for c in MMSE_ITEM_COLUMNS):
            mem, proc = split_mmse([int(float(row[c])) for c in MMSE_ITEM_COLUMNS])
        records.append(PatientRecord(
            patient_id=row["patient_id"],
            visit_month=int(row["visit_month"]),
            diagnosis=row["diagnosis"],
            clinical=clinical,
            genotype=genotype,
            mmse_memory=mem,
            mmse_processing=proc,
        ))
    check_records(records)
    return records


def check_records(records: Sequence[PatientRecord]) -> None:
    diagnosis = {}
    seen = set()
    for r in records:
        if diagnosis.setdefault(r.patient_id, r.diagnosis) != r.diagnosis:
            raise InvalidCohort(f"{r.patient_id}: diagnosis changes between visits")
        key = (r.patient_id, r.visit_month)
        if key in seen:
            raise InvalidCohort(f"{r.patient_id}: duplicate visit {r.visit_month}")
        seen.add(key)


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

def _radiomics_columns(fragments) -> list[str]:
    order: dict[str, tuple] = {}
    for _, _, frag in fragments:
        for pos, name in enumerate(frag.feature_names):
            for label in frag.labels:
                order.setdefault(f"s{label}_{name}", (label, pos))
    return sorted(order, key=lambda c: order[c])


def _tabular_columns(records) -> dict:
    kinds: dict[str, str] = {}
    for r in records:
        for col, value in r.tabular_values().items():
            is_cat = isinstance(value, str)
            if col not in kinds:
                kinds[col] = CATEGORICAL if is_cat else CONTINUOUS
            elif is_cat and kinds[col] == CONTINUOUS:
                kinds[col] = CATEGORICAL
    return kinds


def _cell(value, kind):
    if kind == CONTINUOUS:
        return math.nan if value is None else float(value)
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return str(value)


def fuse(radiomics_fragments: Sequence[tuple[str, int, RadiomicsFragment]],
         records: Sequence[PatientRecord], layout: str = "wide_all_visits",
         visits: Sequence[int] = VISITS) -> FeatureTable:
    """Join radiomics fragments with the tabular records.

    ``per_visit`` yields one row per (patient, visit). ``wide_all_visits`` yields one
    row per patient with radiomics columns suffixed ``_m<month>`` for every month in
    ``visits``; tabular columns then come from the patient's earliest record.
    """
    if layout not in ("per_visit", "wide_all_visits"):
        raise ValueError(f"unknown layout {layout!r}")
    check_records(records)
    by_patient: dict[str, dict[int, PatientRecord]] = {}
    for r in records:
        by_patient.setdefault(r.patient_id, {})[r.visit_month] = r

    frags: dict[tuple[str, int], RadiomicsFragment] = {}
    for pid, month, frag in radiomics_fragments:
        if pid not in by_patient:
            raise UnknownPatient(f"fragment for unknown patient {pid!r}")
        if (pid, int(month)) in frags:
            raise DuplicateFragment(f"two fragments for {pid!r} month {month}")
        frags[(pid, int(month))] = frag

    rad_cols = _radiomics_columns(radiomics_fragments)
    tab_kinds = _tabular_columns(records)
    rows = []
    if layout == "per_visit":
        keys = sorted(set((r.patient_id, r.visit_month) for r in records) | set(frags))
        kinds = {c: CONTINUOUS for c in rad_cols} | tab_kinds
        for pid, month in keys:
            visits_of = by_patient[pid]
            diagnosis = next(iter(visits_of.values())).diagnosis
            row = {"patient_id": pid, "visit_month": month, "diagnosis": diagnosis}
            row.update(dict.fromkeys(rad_cols, math.nan))
            if (pid, month) in frags:
                row.update(frags[(pid, month)].wide())
            rec = visits_of.get(month)
            values = rec.tabular_values() if rec else {}
            for col, kind in tab_kinds.items():
                row[col] = _cell(values.get(col), kind)
            rows.append(row)
    else:
        months = sorted(set(int(m) for m in visits) | {m for _, m in frags})
        wide_cols = [f"{c}_m{m}" for m in months for c in rad_cols]
        kinds = {c: CONTINUOUS for c in wide_cols} | tab_kinds
        for pid in sorted(by_patient):
            visits_of = by_patient[pid]
            base = visits_of[min(visits_of)]
            row = {"patient_id": pid, "diagnosis": base.diagnosis}
            row.update(dict.fromkeys(wide_cols, math.nan))
            for m in months:
                if (pid, m) in frags:
                    row.update({f"{k}_m{m}": v for k, v in frags[(pid, m)].wide().items()})
            values = base.tabular_values()
            for col, kind in tab_kinds.items():
                row[col] = _cell(values.get(col), kind)
            rows.append(row)

    id_cols = ["patient_id", "visit_month", "diagnosis"] if layout == "per_visit" else ["patient_id", "diagnosis"]
    frame = pd.DataFrame(rows, columns=id_cols + list(kinds))
    for col, kind in kinds.items():
        if kind == CONTINUOUS:
            frame[col] = frame[col].astype(np.float64)
        else:
            frame[col] = frame[col].astype(object)
    return FeatureTable(frame, kinds)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

@dataclass
class PreprocessState:
    columns: list[str]
    kinds: dict
    classes: list[str]
    encoders: dict  # categorical column -> {token: code}
    scaling: dict  # continuous column -> (mean, std)
    class_impute: dict  # class -> {column: value}
    global_impute: dict  # column -> value

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "kinds": self.kinds,
            "classes": self.classes,
            "encoders": self.encoders,
            "scaling": {k: list(v) for k, v in self.scaling.items()},
            "class_impute": self.class_impute,
            "global_impute": self.global_impute,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessState":
        return cls(
            columns=list(d["columns"]),
            kinds=dict(d["kinds"]),
            classes=list(d["classes"]),
            encoders={k: dict(v) for k, v in d["encoders"].items()},
            scaling={k: (float(v[0]), float(v[1])) for k, v in d["scaling"].items()},
            class_impute={k: dict(v) for k, v in d["class_impute"].items()},
            global_impute=dict(d["global_impute"]),
        )


def _mode(tokens) -> str | None:
    counts = Counter(tokens)
    if not counts:
        return None
    best = max(counts.values())
    return min(t for t, c in counts.items() if c == best)


def _nanmean(block: np.ndarray) -> np.ndarray:
    """Column means over observed cells; NaN where a column has none."""
    count = (~np.isnan(block)).sum(axis=0)
    total = np.where(np.isnan(block), 0.0, block).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _observed(series: pd.Series, kind: str) -> list:
    if kind == CONTINUOUS:
        return [float(v) for v in series.to_numpy(dtype=np.float64) if not math.isnan(v)]
    return [v for v in series.tolist() if v is not None and not (isinstance(v, float) and math.isnan(v))]


def fit_preprocess(table: FeatureTable, train_row_mask, classes: Sequence[str] | None = None) -> PreprocessState:
    """Fit encoders, class-conditional imputation values and scaling on the training rows only.

    Scaling statistics are computed after class-conditional imputation so that the
    transformed training matrix is exactly standardised.
    """
    mask = np.asarray(train_row_mask, dtype=bool)
    if mask.shape != (len(table),):
        raise ValueError("train_row_mask must have one entry per row")
    if not mask.any():
        raise EmptyTrainSet("no training rows")
    train = table.frame[mask]
    labels = train["diagnosis"].to_numpy()
    if classes is None:
        classes = [c for c in CLASSES if c in set(table.labels)]
    classes = list(classes)
    for c in classes:
        if not np.any(labels == c):
            raise ClassAbsent(f"class {c} has no training rows")

    encoders, scaling, global_impute = {}, {}, {}
    class_impute = {c: {} for c in classes}
    cont = [c for c, k in table.kinds.items() if k == CONTINUOUS]
    block = train[cont].to_numpy(dtype=np.float64) if cont else np.zeros((len(train), 0))
    g = _nanmean(block)
    per_class = {c: _nanmean(block[labels == c]) for c in classes}
    for j, col in enumerate(cont):
        global_impute[col] = 0.0 if math.isnan(g[j]) else float(g[j])
        for c in classes:
            v = per_class[c][j]
            class_impute[c][col] = global_impute[col] if math.isnan(v) else float(v)
    for col, kind in table.kinds.items():
        if kind == CONTINUOUS:
            continue
        observed = _observed(train[col], kind)
        encoders[col] = {tok: code for code, tok in enumerate(sorted(set(observed)))}
        global_impute[col] = _mode(observed)
        for c in classes:
            v = _mode(_observed(train.loc[labels == c, col], kind))
            class_impute[c][col] = global_impute[col] if v is None else v

    filled = _impute(train, table.kinds, labels, class_impute, global_impute, True)
    for col in cont:
        x = filled[col]
        mean = float(x.mean())
        std = float(x.std())
        scaling[col] = (mean, std if std > 0 else 1.0)
    return PreprocessState(list(table.kinds), dict(table.kinds), classes, encoders, scaling,
                           class_impute, global_impute)


def _impute(frame, kinds, labels, class_impute, global_impute, use_class) -> dict:
    out = {}
    labels = np.asarray(labels)
    for col, kind in kinds.items():
        if kind == CONTINUOUS:
            x = frame[col].to_numpy(dtype=np.float64).copy()
            miss = np.isnan(x)
            if miss.any():
                x[miss] = [
                    class_impute[lab][col] if use_class and lab in class_impute else global_impute[col]
                    for lab in labels[miss]
                ]
            out[col] = x
            continue
        filled = []
        for v, lab in zip(frame[col].tolist(), labels):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                v = class_impute[lab][col] if use_class and lab in class_impute else global_impute[col]
            filled.append(v)
        out[col] = filled
    return out


def apply_preprocess(table: FeatureTable, state: PreprocessState, allow_class_imputation: bool = False):
    """Return ``(X, y, groups)``: the numeric matrix, class indices (-1 if unknown) and patient ids.

    Missing cells take the row's class imputation value when ``allow_class_imputation``
    is set (training rows only), otherwise the global training mean/mode.
    """
    labels = table.labels
    missing_cols = [c for c in state.columns if c not in table.kinds]
    if missing_cols:
        raise ValueError(f"table lacks fitted columns: {missing_cols[:5]}")
    kinds = {c: state.kinds[c] for c in state.columns}
    filled = _impute(table.frame, kinds, labels, state.class_impute, state.global_impute,
                     allow_class_imputation)
    X = np.empty((len(table), len(state.columns)), dtype=np.float64)
    for j, col in enumerate(state.columns):
        if kinds[col] == CONTINUOUS:
            mean, std = state.scaling[col]
            X[:, j] = (filled[col] - mean) / std
        else:
            enc = state.encoders[col]
            X[:, j] = [enc.get(tok, -1) if tok is not None else -1 for tok in filled[col]]
    index = {c: i for i, c in enumerate(state.classes)}
    y = np.array([index.get(lab, -1) for lab in labels], dtype=np.int64)
    return X, y, table.groups

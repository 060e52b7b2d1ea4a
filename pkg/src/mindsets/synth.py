"""Deterministic synthetic cohorts: volumes, label masks, tabular visits and a manifest.

Every patient draws from its own Philox stream keyed by
``SeedSequence([seed, stream, patient_index])`` (stream 0 for the main cohort, 1
for the treated/control pair), so output does not depend on generation order.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from mindsets.errors import InvalidSpec
from mindsets.tabular import CATEGORICAL, CLASSES, CONTINUOUS, MMSE_ITEM_COLUMNS, MMSE_MEMORY_ITEMS, VISITS
from mindsets.volume_io import write_raw

SYNTH_FORMAT = "mindsets-synth"
SYNTH_VERSION = 1
RNG_ALGORITHM = "numpy Philox4x64-10 keyed by SeedSequence([seed, stream, patient_index])"

TABULAR_SHIFTS = ("age", "hachinski", "apoe_e4", "mmse_memory", "mmse_processing")

DEFAULT_CLASS_EFFECT = {
    "CTL": {"size": 1.0, "noise": 1.0},
    "MCI": {"size": 0.94, "noise": 1.1},
    "AD": {"size": 0.82, "noise": 1.35},
    "VaD": {"size": 0.9, "noise": 1.2},
}
DEFAULT_TABULAR_EFFECT = {
    "CTL": {},
    "MCI": {"age": 3.0, "hachinski": 0.5, "apoe_e4": 0.1, "mmse_memory": -0.2, "mmse_processing": -0.08},
    "AD": {"age": 6.0, "hachinski": 0.5, "apoe_e4": 0.3, "mmse_memory": -0.45, "mmse_processing": -0.2},
    "VaD": {"age": 5.0, "hachinski": 5.0, "apoe_e4": 0.0, "mmse_memory": -0.2, "mmse_processing": -0.35},
}

SCHEMA = {
    "age": {"kind": CONTINUOUS, "group": "clinical"},
    "sex": {"kind": CATEGORICAL, "group": "clinical"},
    "hachinski": {"kind": CONTINUOUS, "group": "clinical"},
    "apoe": {"kind": CATEGORICAL, "group": "genotype"},
}


@dataclass(frozen=True)
class SynthSpec:
    n_patients: dict = field(default_factory=lambda: {c: 12 for c in CLASSES})
    visits: tuple = VISITS
    grid_size: int = 24
    n_structures: int = 4
    spacing: tuple = (1.0, 1.0, 1.0)
    class_effect: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_CLASS_EFFECT)))
    tabular_effect: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_TABULAR_EFFECT)))
    treatment_drift: float = 1.0
    n_treated: int = 20
    n_control: int = 20
    responder_rate: float = 0.75
    missing_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(sorted(int(v) for v in self.visits)))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        self.validate()

    def validate(self) -> None:
        if set(self.n_patients) - set(CLASSES):
            raise InvalidSpec(f"unknown classes in n_patients: {sorted(set(self.n_patients) - set(CLASSES))}")
        if any(int(n) < 1 for n in self.n_patients.values()) or not self.n_patients:
            raise InvalidSpec("every listed class needs at least one patient")
        if not self.visits or not set(self.visits) <= set(VISITS):
            raise InvalidSpec(f"visits must be a non-empty subset of {VISITS}")
        if self.n_structures < 1 or self.grid_size < 8:
            raise InvalidSpec("need n_structures >= 1 and grid_size >= 8")
        if any(s <= 0 or not math.isfinite(s) for s in self.spacing) or len(self.spacing) != 3:
            raise InvalidSpec("spacing must be three positive numbers")
        for cls in self.n_patients:
            eff = self.class_effect.get(cls)
            if eff is None or set(eff) != {"size", "noise"}:
                raise InvalidSpec(f"class_effect for {cls} needs exactly 'size' and 'noise'")
            if min(eff.values()) <= 0:
                raise InvalidSpec(f"class_effect multipliers for {cls} must be > 0")
        for cls, shifts in self.tabular_effect.items():
            if cls not in CLASSES or set(shifts) - set(TABULAR_SHIFTS):
                raise InvalidSpec(f"bad tabular_effect entry for {cls!r}")
        if not 0 <= self.missing_rate < 1 or not 0 <= self.responder_rate <= 1:
            raise InvalidSpec("missing_rate and responder_rate must be probabilities")
        if self.treatment_drift < 0 or self.n_treated < 1 or self.n_control < 1:
            raise InvalidSpec("treatment_drift must be >= 0 and arm sizes >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["visits"] = list(self.visits)
        d["spacing"] = list(self.spacing)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown SynthSpec fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(str(exc)) from exc


def null_spec(spec: SynthSpec) -> SynthSpec:
    """Same spec with every class effect removed."""
    d = spec.to_dict()
    d["class_effect"] = {c: {"size": 1.0, "noise": 1.0} for c in spec.class_effect}
    d["tabular_effect"] = {c: {} for c in spec.tabular_effect}
    return SynthSpec.from_dict(d)


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, index])))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _layout(n_structures: int, grid: int) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """(centre, base semi-axes, base intensity) per structure on a regular lattice."""
    per_axis = math.ceil(n_structures ** (1 / 3) - 1e-9)
    per_axis = max(per_axis, 1)
    while per_axis**3 < n_structures:
        per_axis += 1
    # prefer a flatter lattice when a single slab suffices
    shape = (per_axis, per_axis, per_axis)
    for nz in range(1, per_axis + 1):
        side = math.ceil(math.sqrt(n_structures / nz))
        if side * side * nz >= n_structures:
            shape = (side, side, nz)
            break
    cell = np.array([grid / s for s in shape])
    out = []
    for label in range(n_structures):
        i, rem = label % shape[0], label // shape[0]
        j, k = rem % shape[1], rem // shape[1]
        centre = (np.array([i, j, k]) + 0.5) * cell - 0.5
        aspect = np.array([1.0, 0.85, 1.15])[np.roll(np.arange(3), label % 3)]
        axes = 0.36 * cell.min() * aspect
        out.append((centre, axes, 70.0 + 12.0 * (label % 4)))
    return out


def _scan(rng: np.random.Generator, spec: SynthSpec, size: float, noise: float,
          patient_scale: np.ndarray, patient_offset: np.ndarray):
    n = spec.grid_size
    coords = np.indices((n, n, n), dtype=np.float64)
    volume = 30.0 + 6.0 * coords[0] / n + rng.normal(0.0, 3.0, (n, n, n))
    labels = np.zeros((n, n, n), dtype=np.int16)
    for s, (centre, axes, base) in enumerate(_layout(spec.n_structures, n)):
        radii = axes * size * patient_scale[s]
        d = sum(((coords[a] - centre[a]) / radii[a]) ** 2 for a in range(3))
        inside = (d <= 1.0) & (labels == 0)
        labels[inside] = s + 1
        volume[inside] = base + patient_offset[s] + rng.normal(0.0, 5.0 * noise, int(inside.sum()))
    return volume, labels


# ---------------------------------------------------------------------------
# Tabular
# ---------------------------------------------------------------------------

def _baseline(rng: np.random.Generator, shifts: dict) -> dict:
    age = float(np.clip(rng.normal(72.0 + shifts.get("age", 0.0), 6.0), 50.0, 95.0))
    sex = "F" if rng.random() < 0.5 else "M"
    hachinski = float(min(18, rng.poisson(1.5 + shifts.get("hachinski", 0.0))))
    p4 = float(np.clip(0.15 + shifts.get("apoe_e4", 0.0), 0.0, 1.0))
    alleles = sorted("e4" if rng.random() < p4 else ("e2" if rng.random() < 0.1 else "e3") for _ in range(2))
    return {"age": round(age, 1), "sex": sex, "hachinski": hachinski, "apoe": "/".join(alleles)}


def _mmse_items(rng: np.random.Generator, shifts: dict) -> list[int]:
    p_mem = float(np.clip(0.92 + shifts.get("mmse_memory", 0.0), 0.02, 0.99))
    p_proc = float(np.clip(0.92 + shifts.get("mmse_processing", 0.0), 0.02, 0.99))
    u = rng.random(30)
    p = np.full(30, p_proc)
    p[list(MMSE_MEMORY_ITEMS)] = p_mem
    return [int(v) for v in (u < p)]


def _blend(a: dict, b: dict, w: float) -> dict:
    keys = set(a) | set(b)
    return {k: (1 - w) * a.get(k, 0.0) + w * b.get(k, 0.0) for k in keys}


def _patient(rng, spec: SynthSpec, pid: str, diagnosis: str, shift_of_month, out: Path,
             effect_from: str, effect_to: str = "CTL"):
    """Write one patient's scans and return (csv rows, manifest entry)."""
    n_s = spec.n_structures
    patient_scale = rng.normal(1.0, 0.03, n_s)
    patient_offset = rng.normal(0.0, 2.0, n_s)
    ce_from = spec.class_effect[effect_from]
    ce_to = spec.class_effect.get(effect_to, ce_from)
    te_from = spec.tabular_effect.get(effect_from, {})
    te_to = spec.tabular_effect.get(effect_to, {})
    base = _baseline(rng, te_from)
    rows, visits = [], {}
    for month in spec.visits:
        w = shift_of_month(month)
        size = (1 - w) * ce_from["size"] + w * ce_to["size"]
        noise = (1 - w) * ce_from["noise"] + w * ce_to["noise"]
        volume, labels = _scan(rng, spec, size, noise, patient_scale, patient_offset)
        stem = f"{pid}_m{month}"
        write_raw(out / "volumes" / stem, volume, spec.spacing, dtype="f8")
        write_raw(out / "masks" / stem, labels, spec.spacing, dtype="i2")
        items = _mmse_items(rng, _blend(te_from, te_to, w))
        row = {"patient_id": pid, "visit_month": month, "diagnosis": diagnosis, **base}
        for col in ("age", "hachinski", "apoe"):
            if rng.random() < spec.missing_rate:
                row[col] = ""
        row.update(zip(MMSE_ITEM_COLUMNS, items))
        rows.append(row)
        visits[str(month)] = {"size": size, "noise": noise, "shift_to_ctl": w}
    entry = {"patient_id": pid, "diagnosis": diagnosis, "baseline": base,
             "structure_scale": patient_scale.tolist(), "structure_offset": patient_offset.tolist(),
             "visits": visits}
    return rows, entry


def _write_tables(out: Path, rows: list[dict]) -> None:
    cols = ["patient_id", "visit_month", "diagnosis", *SCHEMA, *MMSE_ITEM_COLUMNS]
    pd.DataFrame(rows, columns=cols).to_csv(out / "cohort.csv", index=False, lineterminator="\n")
    (out / "cohort.schema.json").write_text(json.dumps({"columns": SCHEMA}, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, manifest: dict) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest["files"] = {p.relative_to(out).as_posix(): _sha256(p) for p in files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    return out


def generate_cohort(spec: SynthSpec, out_dir) -> dict:
    """Write volumes, masks, ``cohort.csv`` (+ schema) and ``manifest.json``; return the manifest."""
    spec.validate()
    out = _prepare(out_dir)
    rows, patients = [], []
    index = 0
    for cls in CLASSES:
        for i in range(int(spec.n_patients.get(cls, 0))):
            pid = f"{cls}{i + 1:03d}"
            r, entry = _patient(_rng(spec.seed, 0, index), spec, pid, cls, lambda m: 0.0, out, cls)
            rows += r
            patients.append(entry)
            index += 1
    _write_tables(out, rows)
    manifest = {"format": SYNTH_FORMAT, "version": SYNTH_VERSION, "kind": "cohort",
                "rng": RNG_ALGORITHM, "spec": spec.to_dict(), "patients": patients}
    return _write_manifest(out, manifest)


def treatment_shift(month: int, drift: float) -> float:
    """Fraction of the MCI-to-CTL distance a responder has travelled by ``month``."""
    return min(1.0, drift * month / 12.0)


def expected_summary(true_p: dict, arms: dict, horizon: int) -> dict:
    """Ground-truth (n, n_decreased, mean decrease % over decreasers) per arm."""
    out = {}
    for arm in ("treated", "control"):
        drops = [true_p[p]["0"] - true_p[p][str(horizon)] for p, a in arms.items() if a == arm]
        dec = [d for d in drops if d > 0]
        out[arm] = [len(drops), len(dec), 100.0 * math.fsum(dec) / len(dec) if dec else 0.0]
    return out


def generate_treated_pair(spec: SynthSpec, out_dir) -> dict:
    """MCI treated and control arms; responders drift toward CTL, everyone else stays put.

    The manifest's ``true_p_target`` is the probability of MCI a perfect classifier
    would assign (1 minus the distance travelled toward CTL), and ``expected`` the
    resulting cohort summary at months 3 and 12.
    """
    spec.validate()
    if not {0, 3, 12} <= set(spec.visits):
        raise InvalidSpec("a treated pair needs visits 0, 3 and 12")
    if "MCI" not in spec.class_effect or "CTL" not in spec.class_effect:
        raise InvalidSpec("a treated pair needs MCI and CTL class effects")
    out = _prepare(out_dir)
    rows, patients, arms, responders, true_p = [], [], {}, {}, {}
    arm_rng = _rng(spec.seed, 1, 0)
    flags = arm_rng.random(spec.n_treated) < spec.responder_rate
    for index in range(spec.n_treated + spec.n_control):
        treated = index < spec.n_treated
        pid = f"T{index + 1:03d}" if treated else f"C{index - spec.n_treated + 1:03d}"
        responder = bool(treated and flags[index])
        drift = spec.treatment_drift if responder else 0.0

        def shift(m, drift=drift):
            return treatment_shift(m, drift)

        r, entry = _patient(_rng(spec.seed, 1, index + 1), spec, pid, "MCI", shift, out, "MCI")
        entry.update(arm="treated" if treated else "control", responder=responder)
        rows += r
        patients.append(entry)
        arms[pid] = entry["arm"]
        responders[pid] = responder
        true_p[pid] = {str(m): 1.0 - shift(m) for m in spec.visits}
    _write_tables(out, rows)
    manifest = {
        "format": SYNTH_FORMAT, "version": SYNTH_VERSION, "kind": "treated_pair",
        "rng": RNG_ALGORITHM, "spec": spec.to_dict(), "patients": patients,
        "target_class": "MCI", "true_p_target": true_p,
        "must_decrease": sorted(p for p in arms if responders[p] and spec.treatment_drift > 0),
        "expected": {str(h): expected_summary(true_p, arms, h) for h in (3, 12)},
    }
    return _write_manifest(out, manifest)


def load_spec(path) -> SynthSpec:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpec(f"{path}: {exc}") from exc
    return SynthSpec.from_dict(data)

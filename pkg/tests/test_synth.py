import hashlib
import json

import numpy as np
import pytest

from mindsets.errors import InvalidSpec
from mindsets.synth import (
    SynthSpec,
    expected_summary,
    generate_cohort,
    generate_treated_pair,
    load_spec,
    null_spec,
    treatment_shift,
)
from mindsets.tabular import load_cohort
from mindsets.volume_io import load_mask, load_volume


def small(**kw):
    base = dict(n_patients={"AD": 2, "CTL": 2}, visits=(0, 12), grid_size=12, n_structures=2)
    base.update(kw)
    return SynthSpec(**base)


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_byte_identical(tmp_path):
    generate_cohort(small(), tmp_path / "a")
    generate_cohort(small(), tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    generate_cohort(small(seed=1), tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_manifest_complete(tmp_path):
    manifest = generate_cohort(small(), tmp_path)
    files = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    assert sorted(manifest["files"]) == files
    for rel, sha in manifest["files"].items():
        assert hashlib.sha256((tmp_path / rel).read_bytes()).hexdigest() == sha
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest
    assert SynthSpec.from_dict(manifest["spec"]) == small()
    assert len(manifest["patients"]) == 4


def test_outputs_loadable(tmp_path):
    generate_cohort(small(), tmp_path)
    records = load_cohort(tmp_path / "cohort.csv")
    assert len(records) == 8 and {r.diagnosis for r in records} == {"AD", "CTL"}
    vol = load_volume(tmp_path / "volumes" / "AD001_m0.vol.json")
    mask = load_mask(tmp_path / "masks" / "AD001_m0.vol.json")
    assert vol.array.shape == (12, 12, 12) and set(np.unique(mask.labels)) == {0, 1, 2}


def test_class_effect_shrinks_structures(tmp_path):
    generate_cohort(small(n_patients={"AD": 4, "CTL": 4}, grid_size=20), tmp_path)
    sizes = {"AD": [], "CTL": []}
    for cls in sizes:
        for i in range(1, 5):
            sizes[cls].append((load_mask(tmp_path / "masks" / f"{cls}{i:03d}_m0.vol.json").labels > 0).sum())
    assert max(sizes["AD"]) < min(sizes["CTL"])


def test_ad_memory_below_vad(tmp_path):
    generate_cohort(small(n_patients={"AD": 15, "VaD": 15}, visits=(0,), grid_size=8, n_structures=1), tmp_path)
    mem = {"AD": [], "VaD": []}
    for r in load_cohort(tmp_path / "cohort.csv"):
        mem[r.diagnosis].append(r.mmse_memory)
    assert np.mean(mem["AD"]) < np.mean(mem["VaD"])


def test_null_spec():
    spec = null_spec(SynthSpec())
    assert all(v == {"size": 1.0, "noise": 1.0} for v in spec.class_effect.values())
    assert all(v == {} for v in spec.tabular_effect.values())


@pytest.mark.parametrize("kw", [
    dict(n_patients={"AD": 0}),
    dict(n_patients={"XX": 2}),
    dict(visits=(0, 6)),
    dict(visits=()),
    dict(class_effect={"AD": {"size": 0.0, "noise": 1.0}, "CTL": {"size": 1.0, "noise": 1.0}}),
    dict(grid_size=4),
    dict(missing_rate=1.5),
    dict(treatment_drift=-1.0),
])
def test_invalid_spec(kw):
    with pytest.raises(InvalidSpec):
        small(**kw)


def test_load_spec_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidSpec):
        load_spec(bad)
    bad.write_text(json.dumps({"n_patients": {"AD": 1}, "frobnicate": 3}))
    with pytest.raises(InvalidSpec):
        load_spec(bad)
    with pytest.raises(InvalidSpec):
        load_spec(tmp_path / "absent.json")


def test_treatment_shift():
    assert treatment_shift(0, 1.0) == 0.0 and treatment_shift(3, 1.0) == 0.25
    assert treatment_shift(12, 1.0) == 1.0 and treatment_shift(12, 3.0) == 1.0
    assert treatment_shift(12, 0.0) == 0.0


def pair_spec(**kw):
    base = dict(n_patients={"MCI": 1, "CTL": 1}, grid_size=10, n_structures=2, n_treated=6, n_control=4)
    base.update(kw)
    return SynthSpec(**base)


def test_treated_pair_manifest(tmp_path):
    m = generate_treated_pair(pair_spec(), tmp_path)
    arms = {p["patient_id"]: p["arm"] for p in m["patients"]}
    assert sum(a == "treated" for a in arms.values()) == 6
    responders = [p["patient_id"] for p in m["patients"] if p["responder"]]
    assert m["must_decrease"] == sorted(responders)
    assert all(arms[p] == "treated" for p in responders)
    exp = m["expected"]["12"]
    assert exp["treated"][:2] == [6, len(responders)] and exp["control"] == [4, 0, 0.0]
    if responders:
        assert exp["treated"][2] == 100.0
        assert m["expected"]["3"]["treated"][2] == 25.0
    assert m["expected"] == {str(h): expected_summary(m["true_p_target"], arms, h) for h in (3, 12)}


def test_default_pair_majority_decreasing(tmp_path):
    m = generate_treated_pair(pair_spec(n_treated=20, n_control=20, grid_size=8, n_structures=1), tmp_path)
    assert len(m["must_decrease"]) > 10


def test_drift_zero_arms_identical_in_law(tmp_path):
    m = generate_treated_pair(pair_spec(treatment_drift=0.0), tmp_path)
    assert m["must_decrease"] == []
    for p in m["patients"]:
        assert {v["shift_to_ctl"] for v in p["visits"].values()} == {0.0}
        assert p["visits"]["12"]["size"] == p["visits"]["0"]["size"]


def test_drift_one_month12_is_ctl(tmp_path):
    spec = pair_spec()
    m = generate_treated_pair(spec, tmp_path)
    for p in m["patients"]:
        if p["responder"]:
            assert p["visits"]["12"]["size"] == spec.class_effect["CTL"]["size"]
            assert p["visits"]["12"]["noise"] == spec.class_effect["CTL"]["noise"]


def test_treated_pair_requires_visits(tmp_path):
    with pytest.raises(InvalidSpec):
        generate_treated_pair(pair_spec(visits=(0, 12)), tmp_path)


@pytest.mark.slow
def test_full_structure_count_path(tmp_path):
    # desk-scale runs use 4 structures; this exercises the full 32-structure layout end to end
    from mindsets.pipeline import extract_cohort, scan_pairs

    generate_cohort(small(n_patients={"AD": 1, "CTL": 1}, visits=(0,), grid_size=32, n_structures=32), tmp_path)
    frags = extract_cohort(scan_pairs(tmp_path / "volumes", tmp_path / "masks"))
    for _, _, frag in frags:
        assert frag.labels == tuple(range(1, 33))
        assert np.isfinite(frag.values).all()

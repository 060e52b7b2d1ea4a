"""Glue between on-disk cohorts and the library: scan discovery, extraction, fragment files."""
from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from mindsets.evaluation import Cohort
from mindsets.radiomics.extract import RadiomicsConfig, RadiomicsFragment, extract_all
from mindsets.tabular import load_cohort
from mindsets.volume_io import load_mask, load_volume

SCAN_STEM = re.compile(r"^(?P<pid>.+)_m(?P<month>\d+)$")
SCAN_SUFFIXES = (".vol.json", ".nii.gz", ".nii")


def _stem(name: str) -> str | None:
    for suffix in SCAN_SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return None


def scan_pairs(volume_dir, mask_dir) -> list[tuple[str, int, Path, Path]]:
    """``(patient, month, volume, mask)`` for every ``<patient>_m<month>`` volume, sorted.

    Raises FileNotFoundError naming the first volume without a mask.
    """
    volume_dir, mask_dir = Path(volume_dir), Path(mask_dir)
    if not volume_dir.is_dir():
        raise FileNotFoundError(f"{volume_dir}: volume directory not found")
    out = []
    for path in sorted(volume_dir.iterdir()):
        stem = _stem(path.name)
        if stem is None:
            continue
        m = SCAN_STEM.match(stem)
        if m is None:
            raise ValueError(f"{path}: file name does not follow <patient>_m<month>")
        suffix = path.name[len(stem):]
        mask = mask_dir / (stem + suffix)
        if not mask.exists():
            raise FileNotFoundError(f"{mask}: mask missing for volume {path}")
        out.append((m["pid"], int(m["month"]), path, mask))
    return sorted(out, key=lambda t: (t[0], t[1]))


def _extract_one(args) -> RadiomicsFragment:
    vol_path, mask_path, config = args
    return extract_all(load_volume(vol_path), load_mask(mask_path), config)


def extract_cohort(pairs, config: RadiomicsConfig = RadiomicsConfig(), jobs: int = 1):
    """Radiomics fragments for every scan pair, in the order given."""
    work = [(v, m, config) for _, _, v, m in pairs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            frags = list(pool.map(_extract_one, work))
    else:
        frags = [_extract_one(w) for w in work]
    return [(pid, month, f) for (pid, month, _, _), f in zip(pairs, frags)]


def fragment_path(out_dir, pid: str, month: int) -> Path:
    return Path(out_dir) / f"{pid}_m{month}.csv"


def write_fragments(fragments, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for pid, month, frag in fragments:
        path = fragment_path(out_dir, pid, month)
        frag.write_csv(path)
        paths.append(path)
    return paths


def load_fragments(frag_dir) -> list[tuple[str, int, RadiomicsFragment]]:
    frag_dir = Path(frag_dir)
    if not frag_dir.is_dir():
        raise FileNotFoundError(f"{frag_dir}: fragment directory not found")
    out = []
    for path in sorted(frag_dir.glob("*.csv")):
        m = SCAN_STEM.match(path.stem)
        if m is None:
            raise ValueError(f"{path}: file name does not follow <patient>_m<month>.csv")
        out.append((m["pid"], int(m["month"]), RadiomicsFragment.read_csv(path)))
    return sorted(out, key=lambda t: (t[0], t[1]))


def load_cohort_dir(cohort_dir, config: RadiomicsConfig = RadiomicsConfig(), jobs: int = 1) -> Cohort:
    """Records plus freshly extracted fragments of a directory laid out like synth output."""
    cohort_dir = Path(cohort_dir)
    records = load_cohort(cohort_dir / "cohort.csv")
    pairs = scan_pairs(cohort_dir / "volumes", cohort_dir / "masks")
    return Cohort(records, extract_cohort(pairs, config, jobs))

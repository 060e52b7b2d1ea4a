"""Session fixtures for the acceptance suite and the per-criterion summary printout."""
import time
from pathlib import Path

import pytest

from mindsets import pipeline, synth
from mindsets.evaluation import Cohort
from mindsets.tabular import load_cohort

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def _build(spec, root: Path, name: str):
    t0 = time.perf_counter()
    manifest = synth.generate_cohort(spec, root / name)
    t1 = time.perf_counter()
    pairs = pipeline.scan_pairs(root / name / "volumes", root / name / "masks")
    fragments = pipeline.extract_cohort(pairs)
    t2 = time.perf_counter()
    cohort = Cohort(load_cohort(root / name / "cohort.csv"), fragments)
    return {"cohort": cohort, "manifest": manifest, "dir": root / name, "spec": spec,
            "seconds_generate": t1 - t0, "seconds_extract": t2 - t1}


@pytest.fixture(scope="session")
def pinned(tmp_path_factory):
    """The pinned strong-separation cohort, generated and extracted once per session."""
    return _build(synth.load_spec(CONFIGS / "synth_pinned.json"), tmp_path_factory.mktemp("pinned"), "cohort")


@pytest.fixture(scope="session")
def null(tmp_path_factory):
    """Same cohort shape with every class effect removed."""
    return _build(synth.load_spec(CONFIGS / "synth_null.json"), tmp_path_factory.mktemp("null"), "cohort")

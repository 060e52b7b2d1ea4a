"""Small in-memory cohorts for pipeline tests (no files, no extraction)."""
import numpy as np

from mindsets.evaluation import Cohort
from mindsets.radiomics.extract import RadiomicsFragment
from mindsets.tabular import CLASSES, PatientRecord

NAMES = ("firstorder_mean", "firstorder_variance", "glcm_contrast", "shape_meshvolume")


def tiny_cohort(n_per_class=6, seed=0, effect=2.0, visits=(0, 3, 12), classes=CLASSES, labels=(1, 2)):
    rng = np.random.default_rng(seed)
    records, fragments = [], []
    for ci, cls in enumerate(classes):
        for i in range(n_per_class):
            pid = f"{cls}{i:02d}"
            age = float(70 + effect * ci + rng.normal())
            for m in visits:
                records.append(PatientRecord(pid, m, cls, {"age": age},
                                             {"apoe": str(rng.choice(["e3/e3", "e3/e4"]))},
                                             int(rng.integers(0, 7)), int(rng.integers(0, 25))))
                vals = rng.normal(size=(len(labels), len(NAMES)))
                vals[:, [0, 2]] += effect * ci  # mean and contrast carry the class signal
                fragments.append((pid, m, RadiomicsFragment(tuple(labels), NAMES, vals)))
    return Cohort(records, fragments)

"""Per-structure extraction of the full feature catalog."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mindsets.errors import DimsMismatch
from mindsets.radiomics.catalog import FAMILIES, catalog
from mindsets.radiomics.firstorder import discretize, first_order_features
from mindsets.radiomics.shape import shape_features
from mindsets.radiomics.texture import (
    glcm_features,
    glcm_matrix,
    gldm_features,
    glrlm_features,
    glszm_features,
    ngtdm_features,
)
from mindsets.volume_io import LabelMask, RegionOfInterest, Volume3D, extract_roi


@dataclass(frozen=True)
class RadiomicsConfig:
    bin_count: int = 32
    gldm_alpha: float = 0.0
    glcm_distance: int = 1
    enabled_families: tuple[str, ...] = tuple(FAMILIES)

    def __post_init__(self):
        if self.bin_count < 1:
            raise ValueError("bin_count must be >= 1")
        if self.gldm_alpha < 0:
            raise ValueError("gldm_alpha must be >= 0")
        if self.glcm_distance < 1:
            raise ValueError("glcm_distance must be >= 1")
        unknown = set(self.enabled_families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown feature families: {sorted(unknown)}")
        # keep catalog order regardless of how the families were listed
        object.__setattr__(self, "enabled_families",
                           tuple(f for f in FAMILIES if f in set(self.enabled_families)))

    @classmethod
    def from_dict(cls, data: dict) -> "RadiomicsConfig":
        data = dict(data)
        if "enabled_families" in data:
            data["enabled_families"] = tuple(data["enabled_families"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled_families"] = list(self.enabled_families)
        return d

    @property
    def feature_names(self) -> list[str]:
        return catalog(self.enabled_families)


def roi_features(roi: RegionOfInterest, config: RadiomicsConfig = RadiomicsConfig()) -> dict[str, float]:
    """All enabled catalog features of one ROI, keyed ``<family>_<feature>``."""
    fams = config.enabled_families
    d = discretize(roi, config.bin_count)
    parts: dict[str, dict[str, float]] = {}
    if "shape" in fams:
        parts["shape"] = shape_features(roi)
    if "firstorder" in fams:
        parts["firstorder"] = first_order_features(roi, config.bin_count)
    if "glcm" in fams:
        parts["glcm"] = glcm_features(glcm_matrix(d, config.glcm_distance))
    if "glrlm" in fams:
        parts["glrlm"] = glrlm_features(d)
    if "glszm" in fams:
        parts["glszm"] = glszm_features(d)
    if "gldm" in fams:
        parts["gldm"] = gldm_features(d, config.gldm_alpha)
    if "ngtdm" in fams:
        parts["ngtdm"] = ngtdm_features(d)
    return {f"{fam}_{name}": value for fam in fams for name, value in parts[fam].items()}


@dataclass(frozen=True, eq=False)
class RadiomicsFragment:
    """Feature rows of one scan: one row per structure label, catalog-ordered columns."""

    labels: tuple[int, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray = field(repr=False)  # (len(labels), len(feature_names))

    def __len__(self) -> int:
        return len(self.labels)

    def wide(self) -> dict[str, float]:
        """Flatten to ``s<label>_<feature>`` columns (label-major, catalog order)."""
        return {
            f"s{label}_{name}": float(self.values[r, c])
            for r, label in enumerate(self.labels)
            for c, name in enumerate(self.feature_names)
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", *self.feature_names])
        for r, label in enumerate(self.labels):
            writer.writerow([label, *(repr(float(v)) for v in self.values[r])])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "RadiomicsFragment":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:1] != ["label"]:
            raise ValueError(f"{path}: not a radiomics fragment (missing 'label' header)")
        names = tuple(rows[0][1:])
        labels = tuple(int(r[0]) for r in rows[1:])
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
        return cls(labels, names, values.reshape(len(labels), len(names)))


def extract_all(vol: Volume3D, mask: LabelMask,
                config: RadiomicsConfig = RadiomicsConfig()) -> RadiomicsFragment:
    """One catalog row for every label present in ``mask``, sorted by label."""
    if vol.dims != mask.dims:
        raise DimsMismatch(f"volume dims {vol.dims} != mask dims {mask.dims}")
    names = tuple(config.feature_names)
    labels = tuple(mask.label_set)
    rows = [list(roi_features(extract_roi(vol, mask, lab), config).values()) for lab in labels]
    values = np.array(rows, dtype=np.float64).reshape(len(labels), len(names))
    return RadiomicsFragment(labels, names, values)


def load_config(path) -> RadiomicsConfig:
    return RadiomicsConfig.from_dict(json.loads(Path(path).read_text()))

"""Gray-level discretization and first-order intensity statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mindsets.errors import EmptyRoi
from mindsets.radiomics.catalog import FIRSTORDER
from mindsets.volume_io import RegionOfInterest


@dataclass(frozen=True, eq=False)
class DiscretizedRoi:
    roi: RegionOfInterest
    bin_count: int
    bin_index: np.ndarray  # int64 in [1, bin_count], aligned with roi.voxel_coords
    bin_edges: np.ndarray  # bin_count + 1 ascending edges

    def grid(self, pad: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Dense bounding-box block of bin indices (0 outside the ROI), zero-padded by ``pad``.

        Also returns the ROI voxel positions inside that block.
        """
        coords = self.roi.voxel_coords
        local = coords - coords.min(axis=0) + pad
        shape = tuple(int(n) for n in local.max(axis=0) + 1 + pad)
        block = np.zeros(shape, dtype=np.int64)
        block[local[:, 0], local[:, 1], local[:, 2]] = self.bin_index
        return block, local


def discretize(roi: RegionOfInterest, bin_count: int = 32) -> DiscretizedRoi:
    """Equal-width binning over the ROI's intensity range; bins are 1-based."""
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    if len(roi) == 0:
        raise EmptyRoi("cannot discretize an empty ROI")
    x = roi.intensities
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        idx = np.ones(len(x), dtype=np.int64)
        edges = lo + np.arange(bin_count + 1, dtype=np.float64)
    else:
        idx = np.floor((x - lo) / (hi - lo) * bin_count).astype(np.int64) + 1
        idx = np.clip(idx, 1, bin_count)
        edges = np.linspace(lo, hi, bin_count + 1)
    return DiscretizedRoi(roi, int(bin_count), idx, edges)


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def first_order_features(roi: RegionOfInterest, bin_count: int = 32) -> dict[str, float]:
    if len(roi) == 0:
        raise EmptyRoi("first-order features need at least one voxel")
    x = roi.intensities
    n = len(x)
    mean = float(x.mean())
    dev = x - mean
    m2 = float((dev**2).mean())
    m3 = float((dev**3).mean())
    m4 = float((dev**4).mean())
    p10, p25, median, p75, p90 = (float(v) for v in np.percentile(x, [10, 25, 50, 75, 90]))
    robust = x[(x >= p10) & (x <= p90)]
    energy = float((x**2).sum())
    sx, sy, sz = roi.spacing

    hist = np.bincount(discretize(roi, bin_count).bin_index, minlength=bin_count + 1)[1:]
    p = hist / n

    values = {
        "mean": mean,
        "median": median,
        "minimum": float(x.min()),
        "maximum": float(x.max()),
        "range": float(x.max() - x.min()),
        "variance": m2,
        "standard_deviation": float(np.sqrt(m2)),
        "skewness": m3 / m2**1.5 if m2 > 0 else 0.0,
        "kurtosis": m4 / m2**2 if m2 > 0 else 0.0,
        "energy": energy,
        "total_energy": energy * sx * sy * sz,
        "entropy": _entropy_bits(p),
        "uniformity": float((p**2).sum()),
        "percentile_10": p10,
        "percentile_90": p90,
        "interquartile_range": p75 - p25,
        "mean_absolute_deviation": float(np.abs(dev).mean()),
        "robust_mean_absolute_deviation": float(np.abs(robust - robust.mean()).mean()),
        "root_mean_squared": float(np.sqrt(energy / n)),
    }
    return {name: values[name] for name in FIRSTORDER}

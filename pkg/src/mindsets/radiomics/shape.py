"""Voxel-based (mesh-free) shape descriptors."""
from __future__ import annotations

import math

import numpy as np

from mindsets.errors import EmptyRoi
from mindsets.radiomics.catalog import SHAPE
from mindsets.volume_io import RegionOfInterest

# eigenvalues below this fraction of the largest are treated as exactly zero
EIGEN_SNAP = 1e-12
_PAIR_BUDGET = 2_000_000


def _occupancy(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    local = coords - coords.min(axis=0) + 1
    grid = np.zeros(tuple(local.max(axis=0) + 2), dtype=bool)
    grid[local[:, 0], local[:, 1], local[:, 2]] = True
    return grid, local


def exposed_faces(coords: np.ndarray) -> np.ndarray:
    """Per-axis count of voxel faces not shared with another ROI voxel."""
    grid, local = _occupancy(coords)
    counts = np.zeros(3, dtype=np.int64)
    for axis in range(3):
        for step in (-1, 1):
            nb = local.copy()
            nb[:, axis] += step
            counts[axis] += int((~grid[nb[:, 0], nb[:, 1], nb[:, 2]]).sum())
    return counts


def surface_area(coords: np.ndarray, spacing) -> float:
    sx, sy, sz = spacing
    fx, fy, fz = exposed_faces(coords)
    return float(fx * sy * sz + fy * sx * sz + fz * sx * sy)


def _boundary(coords: np.ndarray) -> np.ndarray:
    # interior voxels (all six face neighbours present) are never extreme points
    grid, local = _occupancy(coords)
    inner = np.ones(len(coords), dtype=bool)
    for axis in range(3):
        for step in (-1, 1):
            nb = local.copy()
            nb[:, axis] += step
            inner &= grid[nb[:, 0], nb[:, 1], nb[:, 2]]
    return coords[~inner]


def max_diameters(coords: np.ndarray, spacing) -> tuple[float, float, float, float]:
    """Largest centre-to-centre distances: 3D, same-k (slice), same-j (column), same-i (row)."""
    pts = _boundary(coords)
    phys = pts * np.asarray(spacing, dtype=np.float64)
    best = np.zeros(4)
    chunk = max(1, _PAIR_BUDGET // len(pts))
    for start in range(0, len(pts), chunk):
        block = slice(start, start + chunk)
        d2 = ((phys[block, None, :] - phys[None, :, :]) ** 2).sum(axis=2)
        best[0] = max(best[0], d2.max())
        for slot, axis in ((1, 2), (2, 1), (3, 0)):
            same = pts[block, None, axis] == pts[None, :, axis]
            best[slot] = max(best[slot], np.where(same, d2, 0.0).max())
    return tuple(float(math.sqrt(v)) for v in best)


def principal_variances(coords: np.ndarray, spacing) -> np.ndarray:
    """Eigenvalues (descending) of the physical-coordinate population covariance."""
    n = len(coords)
    c = coords.astype(np.int64)
    s = c.sum(axis=0)
    # exact integer scatter: n^2 * cov = n * sum(c c^T) - s s^T
    scatter = n * (c.T @ c) - np.outer(s, s)
    sp = np.asarray(spacing, dtype=np.float64)
    cov = scatter.astype(np.float64) * np.outer(sp, sp) / float(n) ** 2
    lam = np.sort(np.linalg.eigvalsh(cov))[::-1]
    top = lam[0]
    lam = np.where(lam <= EIGEN_SNAP * top, 0.0, lam) if top > 0 else np.zeros(3)
    return lam


def shape_features(roi: RegionOfInterest) -> dict[str, float]:
    if len(roi) == 0:
        raise EmptyRoi("shape features need at least one voxel")
    coords = roi.voxel_coords
    sx, sy, sz = roi.spacing
    volume = len(coords) * sx * sy * sz
    area = surface_area(coords, roi.spacing)
    sphericity = math.pi ** (1 / 3) * (6 * volume) ** (2 / 3) / area
    d3, d_slice, d_col, d_row = max_diameters(coords, roi.spacing)
    lam = principal_variances(coords, roi.spacing)
    if lam[0] > 0:
        elongation = math.sqrt(lam[1] / lam[0])
        flatness = math.sqrt(lam[2] / lam[0])
    else:
        elongation = flatness = 1.0

    values = {
        "voxel_volume": volume,
        "surface_area": area,
        "surface_volume_ratio": area / volume,
        "sphericity": sphericity,
        "compactness1": volume / (math.sqrt(math.pi) * area**1.5),
        "compactness2": 36 * math.pi * volume**2 / area**3,
        "spherical_disproportion": 1.0 / sphericity,
        "maximum_3d_diameter": d3,
        "maximum_2d_diameter_slice": d_slice,
        "maximum_2d_diameter_column": d_col,
        "maximum_2d_diameter_row": d_row,
        "major_axis_length": 4 * math.sqrt(lam[0]),
        "minor_axis_length": 4 * math.sqrt(lam[1]),
        "least_axis_length": 4 * math.sqrt(lam[2]),
        "elongation": elongation,
        "flatness": flatness,
    }
    return {name: float(values[name]) for name in SHAPE}

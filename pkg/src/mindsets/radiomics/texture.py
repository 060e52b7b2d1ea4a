"""Gray-level texture matrices (GLCM, GLRLM, GLSZM, GLDM, NGTDM) and their features.

Conventions shared by every family:

* gray levels are the 1-based bins of a :class:`DiscretizedRoi`;
* neighbourhoods are 3D: the 13 unique directions of the 26-neighbourhood;
* matrices from all directions are summed before any feature is computed;
* entropies are in bits, with ``0 * log(0) = 0``;
* an empty matrix (no pairs, no neighbours) yields 0 for every feature, except
  NGTDM coarseness which is capped at :data:`COARSENESS_CAP`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mindsets.errors import WrongMatrixKind
from mindsets.radiomics.catalog import COARSENESS_CAP, GLCM, GLDM, GLRLM, GLSZM, NGTDM
from mindsets.radiomics.firstorder import DiscretizedRoi

DIRECTIONS = tuple(
    d for d in itertools.product((-1, 0, 1), repeat=3)
    if d > (0, 0, 0)
)
NEIGHBOURS = tuple(d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0))
assert len(DIRECTIONS) == 13 and len(NEIGHBOURS) == 26


@dataclass(frozen=True, eq=False)
class TextureMatrix:
    """Raw (count) texture matrix.

    For NGTDM ``matrix`` has shape ``(Ng, 2)`` holding ``n_i`` and ``s_i`` per level.
    ``normalization`` is the total mass used to turn counts into probabilities.
    """

    kind: str
    matrix: np.ndarray
    normalization: float

    @property
    def normalized(self) -> np.ndarray:
        if self.kind == "NGTDM":
            n = self.matrix[:, 0]
            return n / self.normalization if self.normalization > 0 else np.zeros_like(n)
        if self.normalization <= 0:
            return np.zeros_like(self.matrix)
        return self.matrix / self.normalization


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _flat_offset(block: np.ndarray, offset) -> int:
    strides = np.array(block.strides) // block.itemsize
    return int(np.dot(strides, offset))


def _roi_flat(block: np.ndarray, local: np.ndarray) -> np.ndarray:
    return np.ravel_multi_index(local.T, block.shape)


# ---------------------------------------------------------------------------
# GLCM
# ---------------------------------------------------------------------------

def glcm_matrix(d: DiscretizedRoi, distance: int = 1) -> TextureMatrix:
    """Symmetric co-occurrence counts over the 13 directions at ``distance``."""
    if distance < 1:
        raise ValueError("distance must be a positive integer")
    ng = d.bin_count
    block, local = d.grid(pad=distance)
    flat = block.ravel()
    idx = _roi_flat(block, local)
    a = flat[idx]
    counts = np.zeros(ng * ng, dtype=np.int64)
    for direction in DIRECTIONS:
        b = flat[idx + _flat_offset(block, np.multiply(direction, distance))]
        keep = b > 0
        counts += np.bincount((a[keep] - 1) * ng + (b[keep] - 1), minlength=ng * ng)
    P = counts.reshape(ng, ng)
    P = (P + P.T).astype(np.float64)
    return TextureMatrix("GLCM", P, float(P.sum()))


def glcm_features(m: TextureMatrix) -> dict[str, float]:
    if m.kind != "GLCM":
        raise WrongMatrixKind(f"expected GLCM, got {m.kind}")
    if m.normalization <= 0:
        return {name: 0.0 for name in GLCM}
    p = m.normalized
    ng = p.shape[0]
    levels = np.arange(1, ng + 1, dtype=np.float64)
    i, j = np.meshgrid(levels, levels, indexing="ij")
    px, py = p.sum(axis=1), p.sum(axis=0)
    ux, uy = float(px @ levels), float(py @ levels)
    sx = float(np.sqrt(px @ (levels - ux) ** 2))
    sy = float(np.sqrt(py @ (levels - uy) ** 2))

    k_diff = np.abs(i - j).astype(np.int64)
    p_diff = np.bincount(k_diff.ravel(), weights=p.ravel(), minlength=ng)
    k_sum = (i + j).astype(np.int64)
    p_sum = np.bincount(k_sum.ravel(), weights=p.ravel(), minlength=2 * ng + 1)
    kd = np.arange(ng, dtype=np.float64)
    ks = np.arange(2 * ng + 1, dtype=np.float64)

    hx, hy, hxy = _entropy(px), _entropy(py), _entropy(p.ravel())
    pxy = np.outer(px, py)
    nz = pxy > 0
    hxy1 = float(-(p[nz] * np.log2(pxy[nz])).sum())
    hxy2 = _entropy(pxy.ravel())

    diff_avg = float(kd @ p_diff)
    centred = i + j - ux - uy
    v = {
        "autocorrelation": float((p * i * j).sum()),
        "joint_average": ux,
        "cluster_prominence": float((p * centred**4).sum()),
        "cluster_shade": float((p * centred**3).sum()),
        "cluster_tendency": float((p * centred**2).sum()),
        "contrast": float((p * (i - j) ** 2).sum()),
        "correlation": float(((p * i * j).sum() - ux * uy) / (sx * sy)) if sx * sy > 0 else 0.0,
        "difference_average": diff_avg,
        "difference_entropy": _entropy(p_diff),
        "difference_variance": float(((kd - diff_avg) ** 2) @ p_diff),
        "joint_energy": float((p**2).sum()),
        "joint_entropy": hxy,
        "imc1": (hxy - hxy1) / max(hx, hy) if max(hx, hy) > 0 else 0.0,
        "imc2": float(np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - hxy))))),
        "inverse_difference": float(p_diff @ (1.0 / (1.0 + kd))),
        "inverse_difference_normalized": float(p_diff @ (1.0 / (1.0 + kd / ng))),
        "inverse_difference_moment": float(p_diff @ (1.0 / (1.0 + kd**2))),
        "inverse_difference_moment_normalized": float(p_diff @ (1.0 / (1.0 + kd**2 / ng**2))),
        "inverse_variance": float(p_diff[1:] @ (1.0 / kd[1:] ** 2)),
        "maximum_probability": float(p.max()),
        "sum_average": float(ks @ p_sum),
        "sum_entropy": _entropy(p_sum),
        "sum_squares": float((p * (i - ux) ** 2).sum()),
    }
    return {name: float(v[name]) for name in GLCM}


# ---------------------------------------------------------------------------
# Run-length and size-zone families
# ---------------------------------------------------------------------------

def glrlm_matrices(d: DiscretizedRoi) -> list[TextureMatrix]:
    """One run-length matrix (Ng x max run length) per direction, in :data:`DIRECTIONS` order."""
    ng = d.bin_count
    block, local = d.grid(pad=1)
    flat = block.ravel()
    idx = _roi_flat(block, local)
    level = flat[idx]
    max_len = int(max(block.shape))
    out = []
    for direction in DIRECTIONS:
        step = _flat_offset(block, direction)
        starts = flat[idx - step] != level
        pos, lev = idx[starts], level[starts]
        length = np.ones(len(pos), dtype=np.int64)
        active = np.ones(len(pos), dtype=bool)
        while active.any():
            nxt = pos + length * step
            active &= flat[np.where(active, nxt, pos)] == lev
            length += active
        P = np.zeros((ng, max_len), dtype=np.float64)
        np.add.at(P, (lev - 1, length - 1), 1.0)
        out.append(TextureMatrix("GLRLM", P, float(P.sum())))
    return out


def glrlm_matrix(d: DiscretizedRoi) -> TextureMatrix:
    """Run-length matrix summed over the 13 directions."""
    P = sum(m.matrix for m in glrlm_matrices(d))
    return TextureMatrix("GLRLM", P, float(P.sum()))


def glszm_matrix(d: DiscretizedRoi) -> TextureMatrix:
    """Zone counts of 26-connected equal-level components (Ng x largest zone)."""
    ng = d.bin_count
    block, _ = d.grid(pad=0)
    structure = np.ones((3, 3, 3), dtype=bool)
    zones = []
    for lev in np.unique(d.bin_index):
        labelled, count = ndimage.label(block == lev, structure=structure)
        sizes = np.bincount(labelled.ravel())[1:]
        zones.extend((int(lev), int(s)) for s in sizes[: count])
    max_size = max(s for _, s in zones)
    P = np.zeros((ng, max_size), dtype=np.float64)
    for lev, s in zones:
        P[lev - 1, s - 1] += 1.0
    return TextureMatrix("GLSZM", P, float(P.sum()))


def _size_family(P: np.ndarray, n_voxels: float) -> dict[str, float]:
    # shared by GLRLM (runs) and GLSZM (zones): rows are gray levels, columns are sizes
    total = P.sum()
    ng, ns = P.shape
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, ns + 1, dtype=np.float64)[None, :]
    p = P / total
    row, col = P.sum(axis=1), P.sum(axis=0)
    mu_i = float((p * i).sum())
    mu_j = float((p * j).sum())
    return {
        "se": float((P / j**2).sum() / total),
        "le": float((P * j**2).sum() / total),
        "gln": float((row**2).sum() / total),
        "glnn": float((row**2).sum() / total**2),
        "sn": float((col**2).sum() / total),
        "snn": float((col**2).sum() / total**2),
        "pct": float(total / n_voxels),
        "glv": float((p * (i - mu_i) ** 2).sum()),
        "sv": float((p * (j - mu_j) ** 2).sum()),
        "ent": _entropy(p.ravel()),
        "lgle": float((P / i**2).sum() / total),
        "hgle": float((P * i**2).sum() / total),
        "slgle": float((P / (i**2 * j**2)).sum() / total),
        "shgle": float((P * i**2 / j**2).sum() / total),
        "llgle": float((P * j**2 / i**2).sum() / total),
        "lhgle": float((P * i**2 * j**2).sum() / total),
    }


_FAMILY_KEYS = ("se", "le", "gln", "glnn", "sn", "snn", "pct", "glv", "sv", "ent",
                "lgle", "hgle", "slgle", "shgle", "llgle", "lhgle")


def run_length_features(m: TextureMatrix) -> dict[str, float]:
    if m.kind != "GLRLM":
        raise WrongMatrixKind(f"expected GLRLM, got {m.kind}")
    lengths = np.arange(1, m.matrix.shape[1] + 1)
    # every voxel belongs to exactly one run per direction
    voxel_visits = float((m.matrix * lengths).sum())
    f = _size_family(m.matrix, voxel_visits)
    return {name: f[key] for name, key in zip(GLRLM, _FAMILY_KEYS)}


def size_zone_features(m: TextureMatrix, n_voxels: int) -> dict[str, float]:
    if m.kind != "GLSZM":
        raise WrongMatrixKind(f"expected GLSZM, got {m.kind}")
    f = _size_family(m.matrix, float(n_voxels))
    return {name: f[key] for name, key in zip(GLSZM, _FAMILY_KEYS)}


def glrlm_features(d: DiscretizedRoi) -> dict[str, float]:
    return run_length_features(glrlm_matrix(d))


def glszm_features(d: DiscretizedRoi) -> dict[str, float]:
    return size_zone_features(glszm_matrix(d), len(d.bin_index))


# ---------------------------------------------------------------------------
# GLDM
# ---------------------------------------------------------------------------

def gldm_matrix(d: DiscretizedRoi, alpha: float = 0.0) -> TextureMatrix:
    """Dependence matrix: column ``j`` (1-based) counts voxels with ``j - 1`` dependent neighbours."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    ng = d.bin_count
    block, local = d.grid(pad=1)
    flat = block.ravel()
    idx = _roi_flat(block, local)
    level = flat[idx]
    dependent = np.zeros(len(idx), dtype=np.int64)
    for offset in NEIGHBOURS:
        nb = flat[idx + _flat_offset(block, offset)]
        dependent += (nb > 0) & (np.abs(nb - level) <= alpha)
    P = np.zeros((ng, len(NEIGHBOURS) + 1), dtype=np.float64)
    np.add.at(P, (level - 1, dependent), 1.0)
    last = int(np.nonzero(P.sum(axis=0))[0].max()) + 1
    P = P[:, :last]
    return TextureMatrix("GLDM", P, float(P.sum()))


def dependence_features(m: TextureMatrix) -> dict[str, float]:
    if m.kind != "GLDM":
        raise WrongMatrixKind(f"expected GLDM, got {m.kind}")
    f = _size_family(m.matrix, m.normalization)
    v = {
        "small_dependence_emphasis": f["se"],
        "large_dependence_emphasis": f["le"],
        "gray_level_non_uniformity": f["gln"],
        "dependence_non_uniformity": f["sn"],
        "dependence_non_uniformity_normalized": f["snn"],
        "gray_level_variance": f["glv"],
        "dependence_variance": f["sv"],
        "dependence_entropy": f["ent"],
        "low_gray_level_emphasis": f["lgle"],
        "high_gray_level_emphasis": f["hgle"],
        "small_dependence_low_gray_level_emphasis": f["slgle"],
        "small_dependence_high_gray_level_emphasis": f["shgle"],
        "large_dependence_low_gray_level_emphasis": f["llgle"],
        "large_dependence_high_gray_level_emphasis": f["lhgle"],
    }
    return {name: v[name] for name in GLDM}


def gldm_features(d: DiscretizedRoi, alpha: float = 0.0) -> dict[str, float]:
    return dependence_features(gldm_matrix(d, alpha))


# ---------------------------------------------------------------------------
# NGTDM
# ---------------------------------------------------------------------------

def ngtdm_matrix(d: DiscretizedRoi) -> TextureMatrix:
    """Per-level ``n_i`` (voxels with at least one ROI neighbour) and ``s_i`` (summed |i - neighbour mean|)."""
    ng = d.bin_count
    block, local = d.grid(pad=1)
    flat = block.ravel()
    idx = _roi_flat(block, local)
    level = flat[idx]
    total = np.zeros(len(idx), dtype=np.int64)
    count = np.zeros(len(idx), dtype=np.int64)
    for offset in NEIGHBOURS:
        nb = flat[idx + _flat_offset(block, offset)]
        total += nb
        count += nb > 0
    has = count > 0
    lev = level[has]
    diff = np.abs(lev - total[has] / count[has])
    n = np.bincount(lev - 1, minlength=ng).astype(np.float64)
    s = np.bincount(lev - 1, weights=diff, minlength=ng)
    return TextureMatrix("NGTDM", np.column_stack([n, s]), float(n.sum()))


def ngtdm_from_matrix(m: TextureMatrix) -> dict[str, float]:
    if m.kind != "NGTDM":
        raise WrongMatrixKind(f"expected NGTDM, got {m.kind}")
    n_vp = m.normalization
    if n_vp <= 0:
        return {"coarseness": COARSENESS_CAP, "contrast": 0.0, "busyness": 0.0,
                "complexity": 0.0, "strength": 0.0}
    s = m.matrix[:, 1]
    p = m.normalized
    present = p > 0
    lv = np.arange(1, len(p) + 1, dtype=np.float64)[present]
    p, s = p[present], s[present]
    ngp = len(p)
    ps = p * s
    weighted = float(ps.sum())
    s_total = float(s.sum())
    di = lv[:, None] - lv[None, :]
    pij = p[:, None] + p[None, :]

    coarseness = 1.0 / weighted if weighted > 0 else COARSENESS_CAP
    coarseness = min(coarseness, COARSENESS_CAP)
    if ngp > 1:
        contrast = float((p[:, None] * p[None, :] * di**2).sum()) / (ngp * (ngp - 1)) * s_total / n_vp
    else:
        contrast = 0.0
    busy_den = float(np.abs(lv[:, None] * p[:, None] - lv[None, :] * p[None, :]).sum())
    busyness = weighted / busy_den if busy_den > 0 else 0.0
    complexity = float((np.abs(di) * (ps[:, None] + ps[None, :]) / pij).sum()) / n_vp
    strength = float((pij * di**2).sum()) / s_total if s_total > 0 else 0.0
    return {
        "coarseness": float(coarseness),
        "contrast": float(contrast),
        "busyness": float(busyness),
        "complexity": float(complexity),
        "strength": float(strength),
    }


def ngtdm_features(d: DiscretizedRoi) -> dict[str, float]:
    f = ngtdm_from_matrix(ngtdm_matrix(d))
    return {name: f[name] for name in NGTDM}

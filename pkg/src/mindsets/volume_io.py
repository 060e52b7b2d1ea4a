"""Volume and label-mask I/O.

Two on-disk formats are understood:

* a NIfTI-1 single-file subset (``.nii`` or gzip-compressed ``.nii.gz``),
  datatypes u8/i16/i32/f32/f64, first three dims only, ``scl_slope`` and
  ``scl_inter`` applied (a slope of 0 means 1);
* a raw format made of ``<name>.vol.json`` (dims, spacing, dtype, slope,
  intercept) next to ``<name>.vol.bin`` holding little-endian samples.

Arrays are indexed ``[i, j, k]`` (x, y, z). The flat ``data`` view is x-fastest,
which matches the NIfTI storage order.
"""
from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from mindsets.errors import (
    CorruptHeader,
    DimsMismatch,
    LabelAbsent,
    NonFiniteData,
    NonIntegerLabels,
    UnsupportedFormat,
)

PathLike = Union[str, Path]

NIFTI_HEADER_SIZE = 348
NIFTI_MAGIC = b"n+1\x00"
# NIfTI datatype code -> numpy dtype (without byte order)
NIFTI_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}
RAW_DTYPES = ("u1", "i2", "i4", "f4", "f8")
RAW_FORMAT_VERSION = 1
LABEL_TOLERANCE = 1e-6


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar voxel grid with physical spacing in millimetres."""

    array: np.ndarray  # float64, shape (nx, ny, nz)
    spacing: tuple[float, float, float]

    def __post_init__(self):
        arr = np.asarray(self.array, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) <= 0:
            raise CorruptHeader(f"volume must be 3D with positive dims, got shape {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
            raise CorruptHeader(f"spacing must be three positive finite values, got {self.spacing}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteData("volume contains NaN or Inf")
        object.__setattr__(self, "array", _frozen(arr))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.array.shape)

    @property
    def data(self) -> np.ndarray:
        """Intensities flattened x-fastest."""
        return self.array.ravel(order="F")

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Integer label grid aligned with a :class:`Volume3D`."""

    labels: np.ndarray  # int64, shape (nx, ny, nz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3 or min(lab.shape) <= 0:
            raise CorruptHeader(f"mask must be 3D with positive dims, got shape {lab.shape}")
        if lab.dtype.kind not in "iu":
            raise NonIntegerLabels("mask labels must be integers")
        if lab.size and lab.min() < 0:
            raise NonIntegerLabels("mask labels must be non-negative")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.int64)))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.labels.shape)

    @property
    def label_set(self) -> list[int]:
        values = np.unique(self.labels)
        return [int(v) for v in values if v != 0]


@dataclass(frozen=True, eq=False)
class RegionOfInterest:
    """Voxels of one labelled structure.

    ``voxel_coords`` rows are ``(i, j, k)`` sorted by ``k``, then ``j``, then ``i``.
    """

    label: int
    voxel_coords: np.ndarray  # int64, shape (n, 3)
    intensities: np.ndarray  # float64, shape (n,)
    spacing: tuple[float, float, float]

    def __post_init__(self):
        coords = np.asarray(self.voxel_coords, dtype=np.int64).reshape(-1, 3)
        values = np.asarray(self.intensities, dtype=np.float64).ravel()
        if len(coords) != len(values):
            raise ValueError("intensities and voxel_coords differ in length")
        object.__setattr__(self, "voxel_coords", _frozen(coords))
        object.__setattr__(self, "intensities", _frozen(values))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    def __len__(self) -> int:
        return len(self.intensities)

    @classmethod
    def from_arrays(cls, intensities, present=None, spacing=(1.0, 1.0, 1.0), label: int = 1):
        """Build an ROI from a dense intensity block and an optional boolean mask.

        Handy for synthetic fixtures; voxels are emitted in the canonical order.
        """
        block = np.asarray(intensities, dtype=np.float64)
        if block.ndim == 1:
            block = block.reshape(-1, 1, 1)
        present = np.ones(block.shape, bool) if present is None else np.asarray(present, bool)
        flat = np.flatnonzero(present.ravel(order="F"))
        coords = np.column_stack(np.unravel_index(flat, block.shape, order="F"))
        return cls(label, coords, block.ravel(order="F")[flat], spacing)


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def _open_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise CorruptHeader(f"{path}: broken deflate stream ({exc})") from exc
    return raw


def _read_nifti(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    raw = _open_bytes(path)
    if len(raw) < NIFTI_HEADER_SIZE:
        raise UnsupportedFormat(f"{path}: file shorter than a NIfTI-1 header")
    endian = None
    for candidate in ("<", ">"):
        if struct.unpack(candidate + "i", raw[:4])[0] == NIFTI_HEADER_SIZE:
            endian = candidate
            break
    if endian is None or raw[344:348] != NIFTI_MAGIC:
        raise UnsupportedFormat(f"{path}: not a single-file NIfTI-1 image")

    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype = struct.unpack(endian + "h", raw[70:72])[0]
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = struct.unpack(endian + "f", raw[108:112])[0]
    slope, inter = struct.unpack(endian + "2f", raw[112:120])

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise CorruptHeader(f"{path}: dim[0]={ndim} out of range")
    dims = [dim[i] if i <= ndim else 1 for i in (1, 2, 3)]
    if any(n <= 0 for n in dims):
        raise CorruptHeader(f"{path}: non-positive dims {tuple(dims)}")
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedFormat(f"{path}: unsupported NIfTI datatype {datatype}")

    dtype = np.dtype(NIFTI_DTYPES[datatype]).newbyteorder(endian)
    count = dims[0] * dims[1] * dims[2]
    offset = int(vox_offset) if vox_offset >= NIFTI_HEADER_SIZE else NIFTI_HEADER_SIZE
    if len(raw) < offset + count * dtype.itemsize:
        raise CorruptHeader(f"{path}: data shorter than header promises")
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.float64)

    if not math.isfinite(slope) or slope == 0:
        slope = 1.0
    if not math.isfinite(inter):
        inter = 0.0
    values = values * slope + inter
    spacing = tuple(abs(float(pixdim[i])) if i <= ndim else 1.0 for i in (1, 2, 3))
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise CorruptHeader(f"{path}: invalid voxel spacing {spacing}")
    return values.reshape(dims, order="F"), spacing


def write_nifti(path: PathLike, array, spacing=(1.0, 1.0, 1.0), datatype: int = 64,
                slope: float = 1.0, inter: float = 0.0, compress: bool | None = None,
                endian: str = "<") -> None:
    """Write a minimal NIfTI-1 single-file image (no orientation information)."""
    path = Path(path)
    arr = np.asarray(array)
    if arr.ndim != 3:
        raise ValueError("only 3D arrays are written")
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedFormat(f"unsupported NIfTI datatype {datatype}")
    dtype = np.dtype(NIFTI_DTYPES[datatype]).newbyteorder(endian)
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into(endian + "i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into(endian + "8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into(endian + "2h", hdr, 70, datatype, dtype.itemsize * 8)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(endian + "f", hdr, 108, 352.0)
    struct.pack_into(endian + "2f", hdr, 112, slope, inter)
    hdr[344:348] = NIFTI_MAGIC
    payload = bytes(hdr) + b"\x00" * 4 + arr.astype(dtype).tobytes(order="F")
    if compress is None:
        compress = path.name.endswith(".gz")
    if compress:
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


# ---------------------------------------------------------------------------
# Raw sidecar format
# ---------------------------------------------------------------------------

def raw_paths(path: PathLike) -> tuple[Path, Path]:
    """Return ``(json_path, bin_path)`` for a raw volume given either file or the stem."""
    path = Path(path)
    name = path.name
    for suffix in (".vol.json", ".vol.bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return path.with_name(name + ".vol.json"), path.with_name(name + ".vol.bin")


def write_raw(path: PathLike, array, spacing=(1.0, 1.0, 1.0), dtype: str = "f8") -> tuple[Path, Path]:
    """Write ``array`` in the raw sidecar format; returns the two paths written."""
    if dtype not in RAW_DTYPES:
        raise UnsupportedFormat(f"unsupported raw dtype {dtype}")
    arr = np.asarray(array)
    if arr.ndim != 3:
        raise ValueError("only 3D arrays are written")
    json_path, bin_path = raw_paths(path)
    meta = {
        "format": "mindsets-raw",
        "version": RAW_FORMAT_VERSION,
        "dims": [int(n) for n in arr.shape],
        "spacing": [float(s) for s in spacing],
        "dtype": dtype,
        "scl_slope": 1.0,
        "scl_inter": 0.0,
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    bin_path.write_bytes(arr.astype(np.dtype(dtype).newbyteorder("<")).tobytes(order="F"))
    return json_path, bin_path


def _read_raw(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    json_path, bin_path = raw_paths(path)
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise UnsupportedFormat(f"{json_path}: sidecar is not valid JSON") from exc
    if not isinstance(meta, dict) or meta.get("format") != "mindsets-raw":
        raise UnsupportedFormat(f"{json_path}: not a mindsets raw sidecar")
    try:
        dims = [int(n) for n in meta["dims"]]
        spacing = tuple(float(s) for s in meta.get("spacing", (1.0, 1.0, 1.0)))
        dtype = meta.get("dtype", "f8")
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"{json_path}: malformed sidecar ({exc})") from exc
    if len(dims) != 3 or any(n <= 0 for n in dims):
        raise CorruptHeader(f"{json_path}: non-positive dims {dims}")
    if dtype not in RAW_DTYPES:
        raise UnsupportedFormat(f"{json_path}: unsupported dtype {dtype}")
    if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
        raise CorruptHeader(f"{json_path}: invalid spacing {spacing}")
    raw = bin_path.read_bytes()
    np_dtype = np.dtype(dtype).newbyteorder("<")
    count = dims[0] * dims[1] * dims[2]
    if len(raw) < count * np_dtype.itemsize:
        raise CorruptHeader(f"{bin_path}: data shorter than header promises")
    values = np.frombuffer(raw, dtype=np_dtype, count=count).astype(np.float64)
    slope = float(meta.get("scl_slope", 1.0)) or 1.0
    values = values * slope + float(meta.get("scl_inter", 0.0))
    return values.reshape(dims, order="F"), spacing


def _read_any(path: PathLike) -> tuple[np.ndarray, tuple[float, float, float]]:
    path = Path(path)
    name = path.name
    if name.endswith((".vol.json", ".vol.bin")):
        return _read_raw(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return _read_nifti(path)


def load_volume(path: PathLike) -> Volume3D:
    """Load an intensity volume, applying the stored affine rescale."""
    array, spacing = _read_any(path)
    if not np.all(np.isfinite(array)):
        raise NonFiniteData(f"{path}: NaN or Inf in volume data")
    return Volume3D(array, spacing)


def load_mask(path: PathLike) -> LabelMask:
    """Load a label mask; every stored value must be integral after rescaling."""
    array, spacing = _read_any(path)
    if not np.all(np.isfinite(array)):
        raise NonFiniteData(f"{path}: NaN or Inf in mask data")
    rounded = np.rint(array)
    if np.any(np.abs(array - rounded) > LABEL_TOLERANCE):
        raise NonIntegerLabels(f"{path}: mask holds non-integer labels")
    if np.any(rounded < 0):
        raise NonIntegerLabels(f"{path}: mask holds negative labels")
    return LabelMask(rounded.astype(np.int64), spacing)


def extract_roi(vol: Volume3D, mask: LabelMask, label: int) -> RegionOfInterest:
    """Collect the voxels carrying ``label``, in (k, j, i) lexicographic order."""
    if vol.dims != mask.dims:
        raise DimsMismatch(f"volume dims {vol.dims} != mask dims {mask.dims}")
    flat = np.flatnonzero(mask.labels.ravel(order="F") == label)
    if label <= 0 or flat.size == 0:
        raise LabelAbsent(f"label {label} not present in mask")
    coords = np.column_stack(np.unravel_index(flat, vol.dims, order="F"))
    return RegionOfInterest(int(label), coords, vol.data[flat], vol.spacing)

import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mindsets.errors import (
    CorruptHeader,
    DimsMismatch,
    LabelAbsent,
    NonFiniteData,
    NonIntegerLabels,
    UnsupportedFormat,
)
from mindsets.volume_io import (
    LabelMask,
    Volume3D,
    extract_roi,
    load_mask,
    load_volume,
    raw_paths,
    write_nifti,
    write_raw,
)


def test_nifti_identity_scaling(tmp_path):
    path = tmp_path / "v.nii"
    write_nifti(path, np.full((2, 2, 2), 7, np.int16), datatype=4)
    vol = load_volume(path)
    assert vol.dims == (2, 2, 2)
    assert vol.data.tolist() == [7.0] * 8


def test_nifti_affine_rescale(tmp_path):
    path = tmp_path / "v.nii"
    write_nifti(path, np.full((2, 2, 2), 7, np.int16), datatype=4, slope=2.0, inter=1.0)
    assert load_volume(path).data.tolist() == [15.0] * 8


def test_nifti_zero_slope_means_one(tmp_path):
    path = tmp_path / "v.nii"
    write_nifti(path, np.full((2, 2, 2), 3, np.uint8), datatype=2, slope=0.0, inter=0.5)
    assert load_volume(path).data.tolist() == [3.5] * 8


def test_nifti_zero_dim_is_corrupt(tmp_path):
    path = tmp_path / "v.nii"
    write_nifti(path, np.zeros((1, 4, 4)), datatype=64)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<h", raw, 42, 0)
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptHeader):
        load_volume(path)


def test_nifti_truncated_data(tmp_path):
    path = tmp_path / "v.nii"
    write_nifti(path, np.zeros((4, 4, 4)), datatype=64)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CorruptHeader):
        load_volume(path)


def test_nifti_bad_magic(tmp_path):
    path = tmp_path / "v.nii"
    path.write_bytes(b"\x00" * 400)
    with pytest.raises(UnsupportedFormat):
        load_volume(path)


@pytest.mark.parametrize("dtype,code", [(np.uint8, 2), (np.int16, 4), (np.int32, 8), (np.float32, 16), (np.float64, 64)])
@pytest.mark.parametrize("endian", ["<", ">"])
def test_nifti_datatypes_and_byte_order(tmp_path, dtype, code, endian):
    arr = (np.arange(24).reshape(2, 3, 4) % 17).astype(dtype)
    path = tmp_path / "v.nii"
    write_nifti(path, arr, spacing=(0.5, 1.0, 2.5), datatype=code, endian=endian)
    vol = load_volume(path)
    np.testing.assert_array_equal(vol.array, arr.astype(float))
    assert vol.spacing == (0.5, 1.0, 2.5)


def test_nifti_gzip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 4, 5))
    path = tmp_path / "v.nii.gz"
    write_nifti(path, arr)
    assert path.read_bytes()[:2] == b"\x1f\x8b"
    np.testing.assert_array_equal(load_volume(path).array, arr)


def test_nifti_x_fastest_order(tmp_path):
    arr = np.arange(8, dtype=np.float64).reshape(2, 2, 2)
    path = tmp_path / "v.nii"
    write_nifti(path, arr)
    raw = path.read_bytes()[352:]
    stored = np.frombuffer(raw, "<f8")
    # element (1,0,0) is the second value on disk
    assert stored[1] == arr[1, 0, 0]
    assert load_volume(path).data.tolist() == stored.tolist()


def test_nonfinite_rejected(tmp_path):
    arr = np.zeros((2, 2, 2))
    arr[0, 0, 0] = np.nan
    write_raw(tmp_path / "v", arr)
    with pytest.raises(NonFiniteData):
        load_volume(tmp_path / "v.vol.json")


@given(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
       st.tuples(*[st.floats(0.1, 5.0)] * 3), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_raw_roundtrip_bit_exact(tmp_path_factory, dims, spacing, seed):
    arr = np.random.default_rng(seed).normal(scale=1e6, size=dims)
    stem = tmp_path_factory.mktemp("raw") / "vol"
    json_path, _ = write_raw(stem, arr, spacing)
    vol = load_volume(json_path)
    assert vol.dims == dims and vol.spacing == spacing
    assert vol.array.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_raw_paths_accept_either_file(tmp_path):
    assert raw_paths(tmp_path / "a.vol.bin") == raw_paths(tmp_path / "a.vol.json") == raw_paths(tmp_path / "a")


def test_raw_sidecar_zero_dims(tmp_path):
    write_raw(tmp_path / "v", np.zeros((2, 2, 2)))
    meta = json.loads((tmp_path / "v.vol.json").read_text())
    meta["dims"] = [0, 4, 4]
    (tmp_path / "v.vol.json").write_text(json.dumps(meta))
    with pytest.raises(CorruptHeader):
        load_volume(tmp_path / "v.vol.json")


def test_mask_label_set(tmp_path):
    labels = np.zeros((3, 3, 3), np.int16)
    labels[0, 0, 0] = 3
    labels[2, 1, 0] = 17
    write_nifti(tmp_path / "m.nii", labels, datatype=4)
    assert load_mask(tmp_path / "m.nii").label_set == [3, 17]


def test_mask_all_zero(tmp_path):
    write_nifti(tmp_path / "m.nii", np.zeros((2, 2, 2)), datatype=64)
    assert load_mask(tmp_path / "m.nii").label_set == []


def test_mask_fractional_value(tmp_path):
    arr = np.zeros((2, 2, 2))
    arr[1, 1, 1] = 2.5
    write_nifti(tmp_path / "m.nii", arr)
    with pytest.raises(NonIntegerLabels):
        load_mask(tmp_path / "m.nii")


def test_mask_gzip_corrupt_stream(tmp_path):
    (tmp_path / "m.nii.gz").write_bytes(gzip.compress(b"x" * 100)[:20])
    with pytest.raises(CorruptHeader):
        load_mask(tmp_path / "m.nii.gz")


def test_extract_single_voxel():
    arr = np.zeros((2, 2, 2))
    arr[0, 0, 0] = 9
    labels = np.zeros((2, 2, 2), int)
    labels[0, 0, 0] = 1
    roi = extract_roi(Volume3D(arr, (1, 1, 1)), LabelMask(labels), 1)
    assert roi.voxel_coords.tolist() == [[0, 0, 0]]
    assert roi.intensities.tolist() == [9.0]


def test_extract_label_absent():
    with pytest.raises(LabelAbsent):
        extract_roi(Volume3D(np.zeros((2, 2, 2)), (1, 1, 1)), LabelMask(np.ones((2, 2, 2), int)), 5)


def test_extract_dims_mismatch():
    with pytest.raises(DimsMismatch):
        extract_roi(Volume3D(np.zeros((2, 2, 2)), (1, 1, 1)), LabelMask(np.ones((2, 2, 3), int)), 1)


def test_extract_full_block_order():
    arr = np.arange(8.0).reshape(2, 2, 2)
    roi = extract_roi(Volume3D(arr, (1, 1, 1)), LabelMask(np.ones((2, 2, 2), int)), 1)
    expected = [(i, j, k) for k in range(2) for j in range(2) for i in range(2)]
    assert [tuple(c) for c in roi.voxel_coords.tolist()] == expected
    assert roi.intensities.tolist() == [arr[c] for c in expected]


@given(st.integers(0, 2**32 - 1), st.tuples(*[st.integers(1, 8)] * 3))
@settings(max_examples=40, deadline=None)
def test_extract_count_matches_naive_scan(seed, dims):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, dims)
    vol = Volume3D(rng.normal(size=dims), (1, 1, 1))
    mask = LabelMask(labels)
    for lab in mask.label_set:
        naive = sum(1 for i in range(dims[0]) for j in range(dims[1]) for k in range(dims[2])
                    if labels[i, j, k] == lab)
        roi = extract_roi(vol, mask, lab)
        assert len(roi) == naive
        keys = [(k, j, i) for i, j, k in roi.voxel_coords.tolist()]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_volume_is_immutable():
    vol = Volume3D(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        vol.array[0, 0, 0] = 1


def test_volume_invariants():
    with pytest.raises(CorruptHeader):
        Volume3D(np.zeros((2, 2, 2)), (1, 0, 1))
    with pytest.raises(NonFiniteData):
        Volume3D(np.full((1, 1, 1), np.inf), (1, 1, 1))

import struct

import cv2
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from flowdepth import io as fio

shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)
f32 = hnp.arrays(np.float32, shapes, elements=st.floats(width=32, allow_nan=True))
bools = hnp.arrays(np.bool_, shapes)


@given(st.one_of(f32, bools))
def test_tensor_roundtrip_bit_exact(arr):
    back = fio.decode_tensor(fio.encode_tensor(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tensor_header_layout():
    data = fio.encode_tensor(np.zeros((2, 3), np.float32))
    magic, version, code, rank = struct.unpack_from("<4sHBB", data)
    assert (magic, version, code, rank) == (b"DRFT", 1, 0, 2)
    assert struct.unpack_from("<2I", data, 8) == (2, 3)
    assert len(data) == 8 + 8 + 6 * 4


def test_tensor_file_roundtrip(tmp_path):
    a = np.random.default_rng(0).normal(size=(4, 5, 3)).astype(np.float32)
    fio.write_tensor(tmp_path / "a.drft", a)
    assert fio.read_tensor(tmp_path / "a.drft").tobytes() == a.tobytes()


def test_tensor_float64_is_stored_as_float32():
    back = fio.decode_tensor(fio.encode_tensor(np.array([1.0, 1 / 3])))
    assert back.dtype == np.float32
    assert back[1] == np.float32(1 / 3)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<H", 9) + b[6:],
    lambda b: b[:6] + bytes([7]) + b[7:],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
    lambda b: b[:5],
])
def test_tensor_format_errors(mutate):
    good = fio.encode_tensor(np.ones((2, 2), np.float32))
    with pytest.raises(fio.FormatError):
        fio.decode_tensor(mutate(good))


def test_tensor_rejects_unsupported_dtype():
    with pytest.raises((ValueError, TypeError)):
        fio.encode_tensor(np.array(["a"]))


def _raw_flow_png(path, values):
    cv2.imwrite(str(path), np.asarray(values, dtype=np.uint16)[..., ::-1])


def test_flow_png_zero_and_unit(tmp_path):
    _raw_flow_png(tmp_path / "z.png", [[[2**15, 2**15, 1], [2**15 + 64, 2**15, 1]]])
    flow, valid = fio.read_kitti_flow_png(tmp_path / "z.png")
    np.testing.assert_array_equal(flow[0, 0], [0.0, 0.0])
    np.testing.assert_array_equal(flow[0, 1], [1.0, 0.0])
    assert valid.all()


def test_flow_png_invalid_flag(tmp_path):
    _raw_flow_png(tmp_path / "v.png", [[[2**15, 2**15, 0]]])
    _, valid = fio.read_kitti_flow_png(tmp_path / "v.png")
    assert not valid.any()


def test_flow_png_quantisation_bound(tmp_path):
    rng = np.random.default_rng(0)
    flow = rng.uniform(-512, 511.98, (40, 50, 2))
    valid = rng.random((40, 50)) > 0.2
    fio.write_kitti_flow_png(tmp_path / "f.png", flow, valid)
    back, v = fio.read_kitti_flow_png(tmp_path / "f.png")
    np.testing.assert_array_equal(v, valid)
    assert np.abs(back - flow).max() <= 1 / 128


def test_flow_png_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        fio.write_kitti_flow_png(tmp_path / "f.png", np.full((2, 2, 2), 600.0))


def test_flow_png_wrong_layout(tmp_path):
    cv2.imwrite(str(tmp_path / "g.png"), np.zeros((3, 3), np.uint16))
    with pytest.raises(fio.FormatError):
        fio.read_kitti_flow_png(tmp_path / "g.png")
    cv2.imwrite(str(tmp_path / "c.png"), np.zeros((3, 3, 3), np.uint8))
    with pytest.raises(fio.FormatError):
        fio.read_kitti_flow_png(tmp_path / "c.png")


def test_depth_png_examples(tmp_path):
    cv2.imwrite(str(tmp_path / "d.png"), np.array([[256, 0]], np.uint16))
    depth, valid = fio.read_depth_png16(tmp_path / "d.png")
    assert depth[0, 0] == 1.0 and valid[0, 0]
    assert not valid[0, 1]


def test_depth_png_roundtrip_bound(tmp_path):
    d = np.random.default_rng(1).uniform(0.01, 254.99, (30, 40))
    fio.write_depth_png16(tmp_path / "d.png", d)
    back, valid = fio.read_depth_png16(tmp_path / "d.png")
    assert valid.all()
    assert np.abs(back - d).max() <= 1 / 512


def test_depth_png_wrong_layout(tmp_path):
    cv2.imwrite(str(tmp_path / "d.png"), np.zeros((3, 3), np.uint8))
    with pytest.raises(fio.FormatError):
        fio.read_depth_png16(tmp_path / "d.png")


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        fio.read_kitti_flow_png(tmp_path / "nope.png")
    with pytest.raises(OSError):
        fio.read_tensor(tmp_path / "nope.drft")


def test_mask_png_roundtrip(tmp_path):
    m = np.random.default_rng(2).random((7, 9)) > 0.5
    fio.write_mask_png(tmp_path / "m.png", m)
    np.testing.assert_array_equal(fio.read_mask_png(tmp_path / "m.png"), m)


values = st.dictionaries(
    st.from_regex(r"[a-z][a-z0-9_.]{0,12}", fullmatch=True),
    st.one_of(st.floats(allow_nan=False), st.integers(-10**6, 10**6)),
    max_size=8,
)


@given(values)
def test_record_roundtrip(rec):
    text = fio.format_record(rec)
    keys = [ln.split("=")[0] for ln in text.splitlines()]
    assert keys == sorted(keys)
    back = fio.parse_record(text)
    assert back == {k: float(v) if isinstance(v, float) else v for k, v in rec.items()}


def test_record_file(tmp_path):
    fio.write_record(tmp_path / "r.txt", {"b": 2, "a": 0.1})
    assert (tmp_path / "r.txt").read_text() == "a=0.1\nb=2\n"
    assert fio.read_record(tmp_path / "r.txt") == {"a": 0.1, "b": 2}

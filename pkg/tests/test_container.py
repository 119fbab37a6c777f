import io

import numpy as np
import pytest

from darkwave.container import (
    load_tensor_map,
    read_container,
    read_record,
    save_tensor_map,
    write_container,
    write_record,
)
from darkwave.errors import FormatError


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint16])
def test_roundtrip_bitwise(tmp_path, dtype):
    rng = np.random.default_rng(0)
    if dtype == np.uint16:
        arr = rng.integers(0, 2**16, size=(3, 4, 5)).astype(dtype)
    else:
        arr = rng.standard_normal((3, 4, 5)).astype(dtype)
    path = tmp_path / "t.ldmt"
    write_container(path, arr)
    back = read_container(path)
    assert back.dtype == arr.dtype
    assert back.tobytes() == arr.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "t.ldmt"
    write_container(path, np.zeros((2, 2), dtype=np.float32))
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="magic"):
        read_container(path)


def test_flipped_payload_byte_fails_checksum(tmp_path):
    path = tmp_path / "t.ldmt"
    write_container(path, np.arange(12, dtype=np.float32).reshape(3, 4))
    data = bytearray(path.read_bytes())
    data[-12] ^= 0xFF  # inside the payload, before the 8-byte trailer
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="checksum"):
        read_container(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "t.ldmt"
    write_container(path, np.ones((8, 8), dtype=np.float64))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError, match="truncated"):
        read_container(path)


def test_dims_larger_than_payload(tmp_path):
    # declare 100x100 but append a 4-element payload
    buf = io.BytesIO()
    write_record(buf, np.zeros(4, dtype=np.float32))
    raw = bytearray(buf.getvalue())
    raw[6] = 2  # ndim 1 -> 2
    header = raw[:7] + (100).to_bytes(4, "little") + (100).to_bytes(4, "little")
    path = tmp_path / "t.ldmt"
    path.write_bytes(bytes(header) + raw[11:])
    with pytest.raises(FormatError):
        read_container(path)


def test_multiple_records_stream():
    buf = io.BytesIO()
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    b = np.arange(4, dtype=np.uint16).reshape(2, 2)
    write_record(buf, a)
    write_record(buf, b)
    buf.seek(0)
    assert np.array_equal(read_record(buf), a)
    assert np.array_equal(read_record(buf), b)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.ldmt"
    write_container(path, np.zeros(3, dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(FormatError, match="trailing"):
        read_container(path)


def test_tensor_map_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {
        "encoder.w": rng.standard_normal((4, 3)).astype(np.float32),
        "decoder.b": rng.standard_normal(7).astype(np.float64),
    }
    save_tensor_map(tmp_path / "map", tensors, {"kind": "demo", "note": 1})
    back, meta = load_tensor_map(tmp_path / "map")
    assert meta == {"kind": "demo", "note": 1}
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()


def test_tensor_map_detects_tampering(tmp_path):
    save_tensor_map(tmp_path / "map", {"x": np.ones(4, dtype=np.float32)}, {})
    blob = tmp_path / "map" / "tensors.ldmt"
    data = bytearray(blob.read_bytes())
    data[-10] ^= 0x01
    blob.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_tensor_map(tmp_path / "map")

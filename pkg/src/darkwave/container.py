"""Portable tensor container used by every on-disk artifact.

Layout of one record (all integers little-endian):

    magic    4 bytes  b"LDMT"
    version  u8       currently 1
    dtype    u8       0 = float32, 1 = float64, 2 = uint16
    ndim     u8
    dims     ndim x u32
    payload  row-major values, native dtype width
    trailer  8 bytes  first 8 bytes of SHA-256(payload)

Records are self-sizing, so several of them can be concatenated in a
single file (scene-pair files and tensor-map archives do exactly that).
All writes go through a temp file + os.replace so readers never observe
a partially written artifact.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"LDMT"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint16): 2,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}
_MAX_NDIM = 8


def _payload_checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()[:8]


def write_record(stream: BinaryIO, array: np.ndarray) -> None:
    """Append one tensor record to an open binary stream."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}; expected float32, float64 or uint16")
    if arr.ndim == 0 or arr.ndim > _MAX_NDIM:
        raise FormatError(f"ndim must be in [1, {_MAX_NDIM}], got {arr.ndim}")
    header = MAGIC + struct.pack("<BBB", VERSION, _DTYPE_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    if arr.dtype.byteorder == ">":  # normalize to little-endian payloads
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    payload = arr.tobytes()
    stream.write(header)
    stream.write(payload)
    stream.write(_payload_checksum(payload))


def read_record(stream: BinaryIO) -> np.ndarray:
    """Read one tensor record from an open binary stream."""
    head = stream.read(7)
    if len(head) < 7:
        raise FormatError("truncated header")
    if head[:4] != MAGIC:
        raise FormatError(f"bad magic bytes {head[:4]!r}")
    version, dtype_code, ndim = struct.unpack("<BBB", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}")
    if ndim == 0 or ndim > _MAX_NDIM:
        raise FormatError(f"invalid ndim {ndim}")
    dim_bytes = stream.read(4 * ndim)
    if len(dim_bytes) < 4 * ndim:
        raise FormatError("truncated dims")
    dims = struct.unpack(f"<{ndim}I", dim_bytes)
    dtype = _CODE_DTYPES[dtype_code]
    count = 1
    for d in dims:
        count *= int(d)
    nbytes = count * dtype.itemsize
    payload = stream.read(nbytes)
    if len(payload) < nbytes:
        raise FormatError("truncated payload")
    trailer = stream.read(8)
    if len(trailer) < 8:
        raise FormatError("truncated checksum trailer")
    if trailer != _payload_checksum(payload):
        raise FormatError("payload checksum mismatch")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def atomic_write_bytes(path: Path | str, data: bytes) -> None:
    """Write a whole file atomically (temp file in the same dir + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path: Path | str, array: np.ndarray) -> None:
    """Persist a single tensor to ``path`` atomically."""
    import io

    buf = io.BytesIO()
    write_record(buf, array)
    atomic_write_bytes(path, buf.getvalue())


def read_container(path: Path | str) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as f:
        arr = read_record(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor record")
    return arr


def write_json(path: Path | str, obj) -> None:
    atomic_write_bytes(path, json.dumps(obj, indent=2, sort_keys=True).encode() + b"\n")


def read_json(path: Path | str):
    with Path(path).open("r") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Tensor-map archives: named tensors in one records file + a JSON manifest.
# Used for backbone bundles, taming sets and latent caches.

TENSORS_FILE = "tensors.ldmt"
MANIFEST_FILE = "manifest.json"


def save_tensor_map(
    directory: Path | str,
    tensors: Mapping[str, np.ndarray],
    extra: Mapping | None = None,
) -> None:
    """Write named tensors + manifest into ``directory``.

    The manifest records tensor order, shapes and dtypes, so the archive
    is fully self-describing; ``extra`` lands under the "meta" key.
    """
    import io

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(tensors.keys())
    buf = io.BytesIO()
    entries = {}
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        entries[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype)}
        write_record(buf, arr)
    manifest = {
        "format": "darkwave-tensor-map",
        "version": VERSION,
        "order": names,
        "tensors": entries,
        "meta": dict(extra) if extra else {},
    }
    atomic_write_bytes(directory / TENSORS_FILE, buf.getvalue())
    write_json(directory / MANIFEST_FILE, manifest)


def load_tensor_map(directory: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    """Read back a tensor-map archive; returns (tensors, meta)."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise FormatError(f"{directory}: missing {MANIFEST_FILE}")
    manifest = read_json(manifest_path)
    if manifest.get("format") != "darkwave-tensor-map":
        raise FormatError(f"{directory}: not a tensor-map archive")
    tensors: dict[str, np.ndarray] = {}
    with (directory / TENSORS_FILE).open("rb") as f:
        for name in manifest["order"]:
            arr = read_record(f)
            want = manifest["tensors"][name]
            if list(arr.shape) != want["shape"] or str(arr.dtype) != want["dtype"]:
                raise FormatError(f"{directory}: tensor {name!r} does not match manifest")
            tensors[name] = arr
        if f.read(1):
            raise FormatError(f"{directory}: trailing bytes after last tensor")
    return tensors, manifest.get("meta", {})


def write_jsonl(path: Path | str, records: Iterable[Mapping]) -> None:
    lines = [json.dumps(dict(r), sort_keys=True) for r in records]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode() if lines else b"")

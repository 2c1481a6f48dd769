"""Binary container shared by embedding sets, feature sets and checkpoints.

Layout::

    16 bytes   magic  b"LAFR\\x00CONTAINER\\x00\\x01"
     4 bytes   little-endian uint32 header length H
     H bytes   UTF-8 JSON header {"kind", "meta", "arrays": [{name, dtype, shape}]}
     ...       raw little-endian array payloads, in header order, row-major

The header fully determines the payload length, so truncated or padded files
are rejected before any array is materialised.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LAFR\x00CONTAINER\x00\x01"
_DTYPES = {"<f4", "<f8", "<i4", "<i8"}


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_container(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    specs = []
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<").str
        if dtype not in _DTYPES:
            raise FormatError(f"unsupported dtype {arr.dtype} for array {name!r}")
        specs.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payload.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": specs}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(payload)


def decode_container(data: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not a lafr container")
    offset = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if offset + hlen > len(data):
        raise FormatError("header length exceeds file size")
    try:
        header = json.loads(data[offset : offset + hlen].decode("utf-8"))
        kind = header["kind"]
        meta = header["meta"]
        specs = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unparseable header: {exc}") from exc
    offset += hlen

    expected = 0
    for spec in specs:
        if spec.get("dtype") not in _DTYPES:
            raise FormatError(f"unsupported dtype in header: {spec.get('dtype')!r}")
        shape = spec["shape"]
        if any((not isinstance(s, int)) or s < 0 for s in shape):
            raise FormatError(f"invalid shape {shape!r}")
        expected += int(np.prod(shape, dtype=np.int64)) * np.dtype(spec["dtype"]).itemsize
    if len(data) - offset != expected:
        raise FormatError(
            f"payload is {len(data) - offset} bytes but header declares {expected}"
        )

    arrays = {}
    for spec in specs:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).astype(dt.newbyteorder("="))
        offset += count * dt.itemsize
    return kind, meta, arrays


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_container(kind, meta, arrays))


def read_container(path, expect_kind: str | None = None):
    data = Path(path).read_bytes()
    kind, meta, arrays = decode_container(data)
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"{path}: expected a {expect_kind!r} container, found {kind!r}")
    return kind, meta, arrays

"""Binary tensor containers: ``<u64 header length><JSON header><payload>``.

All integers and array payloads are little-endian.  The JSON header is
written with sorted keys and fixed separators, so identical content always
produces identical bytes.

Single-tensor dumps carry ``{"dtype", "shape"}``.  Multi-tensor bundles
(checkpoints) carry ``{"tensors": {name: {dtype, shape, offset, nbytes}},
"meta": {...}}`` with payload offsets relative to the end of the header.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from .tensor import Tensor

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _dump_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _le(arr: np.ndarray) -> bytes:
    name = str(arr.dtype)
    if name not in _DTYPES:
        raise TypeError(f"cannot serialise dtype {name}")
    return np.ascontiguousarray(arr, dtype=_DTYPES[name]).tobytes()


def dump_tensor(t: Tensor | np.ndarray, fp: BinaryIO) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    header = _dump_header({"dtype": str(arr.dtype), "shape": list(arr.shape)})
    fp.write(struct.pack("<Q", len(header)))
    fp.write(header)
    fp.write(_le(arr))


def load_tensor(fp: BinaryIO) -> Tensor:
    (n,) = struct.unpack("<Q", fp.read(8))
    header = json.loads(fp.read(n))
    dt = np.dtype(_DTYPES[header["dtype"]])
    shape = tuple(header["shape"])
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(fp.read(count * dt.itemsize), dtype=dt).reshape(shape)
    return Tensor(arr.astype(header["dtype"]))


def dumps_tensor(t: Tensor | np.ndarray) -> bytes:
    buf = io.BytesIO()
    dump_tensor(t, buf)
    return buf.getvalue()


def loads_tensor(raw: bytes) -> Tensor:
    return load_tensor(io.BytesIO(raw))


def write_bundle(path: str | Path, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        raw = _le(arr)
        entries[name] = {"dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = _dump_header({"tensors": entries, "meta": meta})
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fp:
        fp.write(struct.pack("<Q", len(header)))
        fp.write(header)
        for raw in chunks:
            fp.write(raw)
    tmp.replace(path)


def read_bundle(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    base = 8 + n
    arrays = {}
    for name, e in header["tensors"].items():
        dt = np.dtype(_DTYPES[e["dtype"]])
        buf = raw[base + e["offset"] : base + e["offset"] + e["nbytes"]]
        arrays[name] = np.frombuffer(buf, dtype=dt).reshape(e["shape"]).astype(e["dtype"])
    return arrays, header["meta"]

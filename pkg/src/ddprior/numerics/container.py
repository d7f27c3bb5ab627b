"""Tensor container file format ("DDPT").

Layout, bit-exact by construction:

    bytes 0..3   magic b"DDPT"
    byte  4      b"\\n"
    one UTF-8 JSON line terminated by b"\\n" describing the file:
        {"version": 1, "rng": "philox4x32",
         "entries": [{"name": ..., "dtype": ..., "shape": [...], "offset": N}, ...],
         "meta": {...}}
    raw little-endian payloads, offsets relative to the end of the header line

Supported dtypes are real64, real32 and complex128.  The header is a single
line so the format stays trivially parseable from any language: read 5 bytes,
read a line, seek.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

from .rng import ALGORITHM

MAGIC = b"DDPT"
FORMAT_VERSION = 1

_DTYPE_TO_NAME = {
    np.dtype("float64"): "real64",
    np.dtype("float32"): "real32",
    np.dtype("complex128"): "complex128",
}
_NAME_TO_DTYPE = {
    "real64": np.dtype("<f8"),
    "real32": np.dtype("<f4"),
    "complex128": np.dtype("<c16"),
}


class ContainerError(ValueError):
    """Base class for container format violations."""


class MagicError(ContainerError):
    """File does not start with the DDPT magic."""


class TruncatedFileError(ContainerError):
    """File ends before the payload a header entry promises."""


class DtypeError(ContainerError):
    """Header names a dtype the format does not define, or an array has one."""


def write_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named tensors plus optional JSON-serializable metadata."""
    entries = []
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TO_NAME:
            raise DtypeError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        dtype_name = _DTYPE_TO_NAME[arr.dtype]
        raw = np.ascontiguousarray(arr).astype(_NAME_TO_DTYPE[dtype_name], copy=False).tobytes()
        entries.append(
            {"name": str(name), "dtype": dtype_name, "shape": list(arr.shape), "offset": offset}
        )
        payloads.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "rng": ALGORITHM,
        "entries": entries,
        "meta": meta or {},
    }
    header_line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(header_line + b"\n")
        for raw in payloads:
            f.write(raw)
    os.replace(tmp, path)


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns ({name: array}, meta)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:5] != MAGIC + b"\n":
        raise MagicError(f"{path}: bad magic {blob[:4]!r}")
    nl = blob.find(b"\n", 5)
    if nl < 0:
        raise TruncatedFileError(f"{path}: unterminated header")
    try:
        header = json.loads(blob[5:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: unreadable header: {e}") from e
    body = blob[nl + 1 :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("entries", []):
        name, dtype_name = entry["name"], entry["dtype"]
        if dtype_name not in _NAME_TO_DTYPE:
            raise DtypeError(f"{path}: entry {name!r} has unknown dtype {dtype_name!r}")
        dtype = _NAME_TO_DTYPE[dtype_name]
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        start = int(entry["offset"])
        if start + nbytes > len(body):
            raise TruncatedFileError(f"{path}: entry {name!r} needs {nbytes} bytes past offset {start}")
        tensors[name] = np.frombuffer(body[start : start + nbytes], dtype=dtype).reshape(shape).copy()
    return tensors, header.get("meta", {})

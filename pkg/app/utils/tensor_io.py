# app/utils/tensor_io.py
# =============================================================================
# Binary tensor container (.tiot)
# -----------------------------------------------------------------------------
# layout: magic "TIOT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim
#         | u64 dims[ndim] | little-endian raw payload
# หนึ่งไฟล์ = หนึ่ง tensor
# =============================================================================
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

__all__ = ["ContainerFormatError", "MAGIC", "VERSION", "encode_tensor", "decode_tensor", "save_tensor", "load_tensor"]

MAGIC = b"TIOT"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBB")

PathLike = Union[str, os.PathLike]


class ContainerFormatError(ValueError):
    """Bytes that are not a valid tensor container."""


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind != "f" or arr.dtype.itemsize not in (4, 8):
        raise ContainerFormatError(f"only float32/float64 tensors can be stored, got {arr.dtype}")
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    code = _DTYPE_CODES[np.dtype(le.dtype.str)]
    if arr.ndim > 255:
        raise ContainerFormatError(f"too many dimensions: {arr.ndim}")
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + np.ascontiguousarray(le).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ContainerFormatError(f"truncated header: {len(blob)} bytes")
    magic, version, code, ndim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise ContainerFormatError(f"unknown dtype code {code}")
    offset = _HEADER.size
    if len(blob) < offset + 8 * ndim:
        raise ContainerFormatError("truncated dimension table")
    shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
    offset += 8 * ndim
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise ContainerFormatError(f"payload has {len(payload)} bytes, shape {shape} needs {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_tensor(path: PathLike, arr: np.ndarray) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_tensor(arr))
    return p


def load_tensor(path: PathLike) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"tensor file not found: {p}")
    return decode_tensor(p.read_bytes())

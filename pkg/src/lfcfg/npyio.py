"""NPY v1.0 reader/writer for the replay interchange format.

Accepted subset: version 1.0, little-endian float32 or float64, C order,
3-dimensional (C, H, W) shape. Files are written with the header padded to a
64-byte boundary, matching the reference layout, so round-trips of float64
payloads are bit-exact and third-party NPY tooling reads them unchanged.
Anything outside the subset is rejected with an error naming the offending
header field; proper validation is the whole point of not delegating to a
general-purpose loader.
"""

from __future__ import annotations

import ast
import io
import os
import struct

import numpy as np

from .errors import NpyFormatError
from .field import Field

_MAGIC = b"\x93NUMPY"
_DTYPES = {"<f4": np.float32, "<f8": np.float64}


def npy_bytes(array: np.ndarray, dtype: str = "float64") -> bytes:
    """Serialize a 3-d array as NPY v1.0 bytes at the requested precision."""
    descr = {"float32": "<f4", "float64": "<f8"}.get(dtype)
    if descr is None:
        raise NpyFormatError(f"unsupported write dtype {dtype!r}")
    arr = np.ascontiguousarray(array, dtype=_DTYPES[descr])
    if arr.ndim != 3:
        raise NpyFormatError(f"shape must be 3-dimensional (C,H,W), got {arr.shape}")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(arr.shape),
    )
    # magic(6) + version(2) + header-length(2) + header padded to a 64-byte multiple
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header = header + " " * pad + "\n"
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(bytes([1, 0]))
    out.write(struct.pack("<H", len(header)))
    out.write(header.encode("latin1"))
    out.write(arr.tobytes(order="C"))
    return out.getvalue()


def _parse_header(buf: bytes) -> tuple:
    """Validate the prelude and header dict; returns (descr, shape, payload offset)."""
    if len(buf) < 10 or buf[:6] != _MAGIC:
        raise NpyFormatError("bad magic: not an NPY file")
    major, minor = buf[6], buf[7]
    if (major, minor) != (1, 0):
        raise NpyFormatError(f"unsupported version: {major}.{minor} (only 1.0 accepted)")
    (hlen,) = struct.unpack("<H", buf[8:10])
    header_end = 10 + hlen
    if len(buf) < header_end:
        raise NpyFormatError("truncated header")
    try:
        header = ast.literal_eval(buf[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise NpyFormatError(f"unparseable header dict: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError(f"header keys must be descr/fortran_order/shape, got {sorted(header)}")
    descr = header["descr"]
    if descr not in _DTYPES:
        raise NpyFormatError(f"descr {descr!r} not supported (little-endian float32/float64 only)")
    if header["fortran_order"] is not False:
        raise NpyFormatError(f"fortran_order must be False, got {header['fortran_order']!r}")
    shape = header["shape"]
    if not (isinstance(shape, tuple) and len(shape) == 3 and all(isinstance(d, int) and d >= 1 for d in shape)):
        raise NpyFormatError(f"shape must be a 3-tuple of positive ints, got {shape!r}")
    return descr, shape, header_end


def npy_dtype(buf: bytes) -> str:
    """Stored precision of an NPY buffer: 'float32' or 'float64'."""
    descr, _, _ = _parse_header(buf)
    return {"<f4": "float32", "<f8": "float64"}[descr]


def parse_npy(buf: bytes) -> np.ndarray:
    """Parse NPY v1.0 bytes; returns a float64 (C,H,W) array (float32 widened)."""
    descr, shape, header_end = _parse_header(buf)
    itemsize = np.dtype(_DTYPES[descr]).itemsize
    expected = itemsize * int(np.prod(shape))
    payload = buf[header_end:]
    if len(payload) != expected:
        raise NpyFormatError(f"payload size {len(payload)} does not match shape {shape} ({expected} bytes)")
    arr = np.frombuffer(payload, dtype=_DTYPES[descr]).reshape(shape)
    return arr.astype(np.float64)


def write_field(field: Field, path: str, dtype: str = "float64") -> None:
    write_bytes_atomic(path, npy_bytes(field.data, dtype))


def read_field(path: str) -> Field:
    with open(path, "rb") as fh:
        return Field(parse_npy(fh.read()))


def write_bytes_atomic(path: str, data: bytes) -> None:
    """Write-then-rename so partial files are never observed."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = os.path.join(directory, f".{os.path.basename(path)}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)

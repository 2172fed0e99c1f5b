import io
import struct

import numpy as np
import pytest

from lfcfg.errors import NpyFormatError
from lfcfg.field import Field
from lfcfg.npyio import npy_bytes, npy_dtype, parse_npy, read_field, write_field


def test_round_trip_bit_identical(tmp_path, field_factory):
    f = field_factory((3, 8, 8))
    path = tmp_path / "f.npy"
    write_field(f, str(path))
    first = path.read_bytes()
    g = read_field(str(path))
    assert np.array_equal(g.data, f.data)
    write_field(g, str(path))
    assert path.read_bytes() == first


def test_min_field_layout():
    # hand-built from the v1.0 layout rules: 6-byte magic, version, u16 length,
    # dict padded with spaces + newline to a 64-byte boundary => 128-byte header
    buf = npy_bytes(np.full((1, 1, 1), 0.5), "float64")
    header = (
        b"\x93NUMPY\x01\x00"
        + struct.pack("<H", 118)
        + ("{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1), }".ljust(117) + "\n").encode()
    )
    assert len(buf) == 128 + 8
    assert buf[:128] == header
    assert parse_npy(buf)[0, 0, 0] == 0.5


def test_numpy_interop(tmp_path, field_factory):
    f = field_factory((2, 3, 4))
    ours = npy_bytes(f.data, "float64")
    out = io.BytesIO()
    np.save(out, f.data)
    assert out.getvalue() == ours
    loaded = np.load(io.BytesIO(ours))
    assert np.array_equal(loaded, f.data)


def test_float32_widened_on_read(tmp_path, field_factory):
    f = field_factory((3, 4, 4))
    path = tmp_path / "f32.npy"
    write_field(f, str(path), dtype="float32")
    g = read_field(str(path))
    assert g.data.dtype == np.float64
    assert np.array_equal(g.data, f.data.astype(np.float32).astype(np.float64))
    assert npy_dtype(path.read_bytes()) == "float32"


def test_fortran_order_rejected(tmp_path):
    arr = np.asfortranarray(np.arange(24.0).reshape(2, 3, 4))
    path = tmp_path / "f.npy"
    np.save(path, arr)
    with pytest.raises(NpyFormatError, match="fortran_order"):
        read_field(str(path))


def test_bad_magic_rejected():
    with pytest.raises(NpyFormatError, match="magic"):
        parse_npy(b"NOTNPY\x01\x00" + b"\x00" * 32)


def test_unsupported_version_rejected(field_factory):
    buf = bytearray(npy_bytes(field_factory((1, 2, 2)).data))
    buf[6:8] = bytes([2, 0])
    with pytest.raises(NpyFormatError, match="version"):
        parse_npy(bytes(buf))


def test_unsupported_dtype_rejected():
    out = io.BytesIO()
    np.save(out, np.arange(8, dtype=np.int32).reshape(2, 2, 2))
    with pytest.raises(NpyFormatError, match="descr"):
        parse_npy(out.getvalue())


def test_wrong_rank_rejected():
    out = io.BytesIO()
    np.save(out, np.zeros((4, 4)))
    with pytest.raises(NpyFormatError, match="shape"):
        parse_npy(out.getvalue())


def test_payload_size_mismatch_rejected(field_factory):
    buf = npy_bytes(field_factory((1, 2, 2)).data)
    with pytest.raises(NpyFormatError, match="payload"):
        parse_npy(buf[:-8])


def test_write_rejects_unknown_dtype(field_factory):
    with pytest.raises(NpyFormatError):
        npy_bytes(field_factory((1, 2, 2)).data, "float16")

"""Binary tensor container.

A file is a concatenation of records, each laid out little-endian as::

    b"RFK1" | dtype u8 (0=float32, 1=float64) | rank u8 | rank x u32 extents
    | name length u16 | UTF-8 name | row-major payload
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"RFK1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_record(name, array):
    arr = np.asarray(array)
    if arr.dtype not in CODES:
        raise FormatError(f"record {name!r}: unsupported dtype {arr.dtype}")
    if arr.ndim < 1 or arr.ndim > 255 or any(n < 1 for n in arr.shape):
        raise FormatError(f"record {name!r}: extents must be positive, got {arr.shape}")
    raw_name = name.encode("utf-8")
    if len(raw_name) > 0xFFFF:
        raise FormatError(f"record name too long ({len(raw_name)} bytes)")
    code = CODES[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<H", len(raw_name)) + raw_name
    return header + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode_records(buf):
    """Parse every record in ``buf`` into an ordered name -> array map."""
    out = OrderedDict()
    pos = 0
    end = len(buf)

    def need(n, what):
        if pos + n > end:
            raise FormatError(f"truncated {what}", pos)

    while pos < end:
        need(6, "record header")
        if buf[pos:pos + 4] != MAGIC:
            raise FormatError(f"bad magic {bytes(buf[pos:pos + 4])!r}", pos)
        code, rank = struct.unpack_from("<BB", buf, pos + 4)
        if code not in DTYPES:
            raise FormatError(f"unknown dtype code {code}", pos + 4)
        if rank < 1:
            raise FormatError("rank must be >= 1", pos + 5)
        pos += 6
        need(4 * rank + 2, "extents")
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        if any(n == 0 for n in shape):
            raise FormatError(f"empty extent in {shape}", pos)
        pos += 4 * rank
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(name_len, "name")
        try:
            name = bytes(buf[pos:pos + name_len]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("record name is not valid UTF-8", pos) from exc
        pos += name_len
        dtype = DTYPES[code]
        nbytes = dtype.itemsize * int(np.prod(shape))
        need(nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    return out


def save_records(path, records):
    """Write ``{name: array}`` records to ``path`` in insertion order."""
    path = Path(path)
    blob = b"".join(encode_record(name, arr) for name, arr in records.items())
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def save_record(path, name, array):
    save_records(path, {name: array})


def load_records(path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return decode_records(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def load_record(path, name=None, dtype=None):
    """Read one record; ``name=None`` takes the first. ``dtype`` is enforced if given."""
    records = load_records(path)
    if not records:
        raise FormatError(f"{path}: file holds no records", 0)
    if name is None:
        name = next(iter(records))
    if name not in records:
        raise FormatError(f"{path}: no record named {name!r}")
    arr = records[name]
    if dtype is not None and arr.dtype != np.dtype(dtype):
        raise FormatError(f"{path}: record {name!r} has dtype {arr.dtype}, expected {np.dtype(dtype)}")
    return arr

"""Strict NPY (version 1.0) tensor interchange.

Only the formats the pipeline exchanges are accepted: little-endian
float32 (probabilities), uint8 (masks) and uint32 (label maps), C-order,
header version exactly 1.0.  Each way a file can be unusable maps to its
own error so callers can tell malformed metadata, unsupported content and
short payloads apart.  Writes are atomic (temp file plus rename).
"""

from __future__ import annotations

import ast
import os
import struct
import tempfile

import numpy as np

_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {"<f4": np.float32, "|u1": np.uint8, "<u4": np.uint32}
_DESCR_OF_DTYPE = {np.dtype(np.float32): "<f4", np.dtype(np.uint8): "|u1",
                   np.dtype(np.uint32): "<u4"}


class NpyFormatError(ValueError):
    """Base class for NPY interchange failures."""


class MalformedHeader(NpyFormatError):
    pass


class UnsupportedDtype(NpyFormatError):
    pass


class UnsupportedLayout(NpyFormatError):
    pass


class TruncatedPayload(NpyFormatError):
    pass


def read_npy(path) -> np.ndarray:
    """Read a tensor, enforcing the v1.0 / C-order / dtype contract."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10 or data[:6] != _MAGIC:
        raise MalformedHeader(f"{path}: not an NPY file")
    major, minor = data[6], data[7]
    if (major, minor) != (1, 0):
        raise MalformedHeader(f"{path}: NPY version {major}.{minor}, expected 1.0")
    (header_len,) = struct.unpack("<H", data[8:10])
    header_end = 10 + header_len
    if len(data) < header_end:
        raise MalformedHeader(f"{path}: header runs past end of file")
    try:
        header = ast.literal_eval(data[10:header_end].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{path}: unparseable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise MalformedHeader(f"{path}: unexpected header keys")
    descr = header["descr"]
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise MalformedHeader(f"{path}: bad shape {shape!r}")
    if header["fortran_order"]:
        raise UnsupportedLayout(f"{path}: Fortran-order tensors are not supported")
    if descr not in _SUPPORTED_DESCRS:
        raise UnsupportedDtype(f"{path}: dtype {descr!r} not in {sorted(_SUPPORTED_DESCRS)}")
    dtype = np.dtype(_SUPPORTED_DESCRS[descr])
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[header_end:]
    if len(payload) < expected:
        raise TruncatedPayload(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise MalformedHeader(f"{path}: {len(payload) - expected} trailing bytes")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_npy(path, array: np.ndarray) -> None:
    """Write a tensor as NPY v1.0; the dtype must be f4, u1 or u4."""
    array = np.ascontiguousarray(array)
    descr = _DESCR_OF_DTYPE.get(array.dtype)
    if descr is None:
        raise UnsupportedDtype(
            f"cannot write dtype {array.dtype}, use float32, uint8 or uint32"
        )
    header = {
        "descr": descr,
        "fortran_order": False,
        "shape": tuple(int(s) for s in array.shape),
    }
    text = repr(header).encode("ascii")
    # pad so the payload starts on a 64-byte boundary, newline-terminated
    unpadded = len(_MAGIC) + 4 + len(text) + 1
    pad = (64 - unpadded % 64) % 64
    text += b" " * pad + b"\n"
    blob = _MAGIC + bytes([1, 0]) + struct.pack("<H", len(text)) + text
    atomic_write_bytes(path, blob + array.tobytes())


def atomic_write_bytes(path, blob: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))

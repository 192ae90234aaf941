"""Matrix file I/O: a small binary format plus CSV.

Binary layout (little-endian): 4-byte magic "ATNM", uint16 version (1),
uint32 rows, uint32 cols, then rows*cols IEEE-754 float64 payload in
row-major order. Round-trips are bit-exact. Parse failures report the byte
offset at which validation failed.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from . import linalg
from .errors import MatrixFileError

MAGIC = b"ATNM"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


def write_matrix(path, m) -> None:
    mat = linalg.as_matrix(m)
    payload = np.ascontiguousarray(mat, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, mat.shape[0], mat.shape[1]))
        fh.write(payload)


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MatrixFileError(f"truncated header ({len(data)} bytes)", len(data))
    magic, version, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MatrixFileError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise MatrixFileError(f"unsupported version {version}", 4)
    expected = rows * cols * 8
    if len(data) - _HEADER.size != expected:
        raise MatrixFileError(
            f"payload is {len(data) - _HEADER.size} bytes, expected {expected}",
            len(data),
        )
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    bad = np.nonzero(~np.isfinite(flat))[0]
    if bad.size:
        raise MatrixFileError("non-finite value", _HEADER.size + 8 * int(bad[0]))
    return flat.reshape(rows, cols).astype(np.float64)


def write_csv_matrix(path, m) -> None:
    """CSV with '.' decimal and shortest round-trip float formatting."""
    mat = linalg.as_matrix(m)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in mat:
            writer.writerow([repr(float(x)) for x in row])


def read_csv_matrix(path) -> np.ndarray:
    rows = []
    offset = 0
    with open(path, "rb") as fh:
        raw = fh.read()
    for line_no, line in enumerate(io.StringIO(raw.decode("utf-8"))):
        stripped = line.strip()
        if not stripped:
            offset += len(line.encode("utf-8"))
            continue
        try:
            rows.append([float(cell) for cell in stripped.split(",")])
        except ValueError as exc:
            raise MatrixFileError(f"unparsable CSV row {line_no}: {exc}", offset) from exc
        offset += len(line.encode("utf-8"))
    if not rows:
        raise MatrixFileError("empty CSV matrix", 0)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise MatrixFileError("ragged CSV rows", 0)
    return linalg.as_matrix(np.array(rows))


def load_matrix(path) -> np.ndarray:
    """Dispatch on suffix: .csv reads CSV, anything else the binary format."""
    if str(path).lower().endswith(".csv"):
        return read_csv_matrix(path)
    return read_matrix(path)

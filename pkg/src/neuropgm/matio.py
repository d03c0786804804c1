"""Matrix and event-table file formats.

Binary format ("F64MAT"): magic ``PGMF``, then little-endian u32
version (currently 1), u32 ndim, ndim u64 dims, and the payload as
row-major little-endian float64.  Lossless for any finite array.

Text format: headered CSV with ``.`` decimal point and ``,`` separator.
``read_matrix`` sniffs the magic bytes, so either format loads through
one entry point; ``write_matrix`` picks CSV for paths ending in
``.csv`` and F64MAT otherwise.

Event tables are CSV with the required header columns
``onset,duration,amplitude,condition``.
"""

import os
import struct

import numpy as np

from .errors import (BadMagic, DataFormatError, DimensionMismatch,
                     NonNumericCell, TruncatedFile)

__all__ = ["MAGIC", "read_matrix", "write_matrix",
           "read_events", "write_events"]

MAGIC = b"PGMF"
_VERSION = 1


def write_matrix(path, M):
    """Write an array; CSV when the path ends in .csv, F64MAT otherwise."""
    M = np.ascontiguousarray(np.asarray(M, dtype=np.float64))
    if not np.all(np.isfinite(M)):
        raise DataFormatError("refusing to write non-finite entries")
    path = os.fspath(path)
    if path.lower().endswith(".csv"):
        _write_csv(path, np.atleast_2d(M))
        return
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", _VERSION, M.ndim))
        fh.write(struct.pack("<" + "Q" * M.ndim, *M.shape))
        fh.write(M.astype("<f8", copy=False).tobytes(order="C"))


def read_matrix(path):
    """Read a matrix file, sniffing F64MAT magic vs CSV."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _read_binary(path)
    # a binary extension with the wrong magic is corruption, not CSV
    if path.lower().endswith(".f64mat"):
        raise BadMagic(
            f"{path}: expected {MAGIC!r} at byte 0, found {head!r}")
    return _read_csv(path)


def _read_binary(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise BadMagic(
            f"{path}: expected {MAGIC!r} at byte 0, found {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFile(f"{path}: header needs 12 bytes, found "
                            f"{len(data)}")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if ndim < 1 or ndim > 32:
        raise DataFormatError(f"{path}: implausible ndim {ndim}")
    need = 12 + 8 * ndim
    if len(data) < need:
        raise TruncatedFile(f"{path}: dims need {need} bytes, found "
                            f"{len(data)}")
    dims = struct.unpack_from("<" + "Q" * ndim, data, 12)
    count = 1
    for d in dims:
        count *= d
    expected = need + 8 * count
    if len(data) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes "
                            f"({count} float64 payload), found {len(data)}")
    if len(data) > expected:
        raise DataFormatError(f"{path}: {len(data) - expected} trailing "
                              "bytes after payload")
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=need)
    return flat.reshape(dims).astype(np.float64)


def _write_csv(path, M):
    if M.ndim != 2:
        raise DimensionMismatch("CSV output is limited to 2-D matrices")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"c{j}" for j in range(M.shape[1])) + "\n")
        for row in M:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise DataFormatError(f"{path}: empty CSV (header required)")
    header = [c.strip() for c in lines[0].split(",")]
    width = len(header)
    rows = []
    for r, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width:
            raise DataFormatError(
                f"{path}: row {r} has {len(cells)} cells, header has {width}")
        parsed = []
        for c, cell in enumerate(cells):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise NonNumericCell(
                    f"{path}: row {r}, column {c + 1}: "
                    f"cannot parse {cell.strip()!r}") from None
        rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: CSV has a header but no data rows")
    return np.array(rows, dtype=np.float64)


_EVENT_COLUMNS = ("onset", "duration", "amplitude", "condition")


def write_events(path, events):
    """Write (onset, duration, amplitude, condition) rows with header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_EVENT_COLUMNS) + "\n")
        for onset, duration, amplitude, condition in events:
            fh.write(f"{onset:g},{duration:g},{amplitude:.17g},"
                     f"{condition}\n")


def read_events(path):
    """Read an event table; returns a list of 4-tuples.

    The header must contain the columns onset, duration, amplitude,
    condition (any order; extras rejected).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise DataFormatError(f"{path}: empty event file (header required)")
    header = [c.strip().lower() for c in lines[0].split(",")]
    if sorted(header) != sorted(_EVENT_COLUMNS):
        raise DataFormatError(
            f"{path}: event header must be exactly {_EVENT_COLUMNS}, "
            f"got {tuple(header)}")
    idx = {name: header.index(name) for name in _EVENT_COLUMNS}
    events = []
    for r, line in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 4:
            raise DataFormatError(
                f"{path}: row {r} has {len(cells)} cells, expected 4")
        try:
            onset = float(cells[idx["onset"]])
            duration = float(cells[idx["duration"]])
            amplitude = float(cells[idx["amplitude"]])
        except ValueError as exc:
            raise NonNumericCell(f"{path}: row {r}: {exc}") from None
        events.append((onset, duration, amplitude, cells[idx["condition"]]))
    return events

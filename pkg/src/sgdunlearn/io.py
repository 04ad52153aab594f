"""On-disk formats: binary weight checkpoints and run-log CSVs.

Checkpoint layout (all little-endian)::

    b"UWGT" | uint32 version | uint64 count | count x float64
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"UWGT"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
RUNLOG_FIELDS = ("step", "loss", "accuracy", "sigma_top", "delta_w_norm")


def write_checkpoint(path, params):
    params = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, params.size))
        fh.write(params.tobytes())


def read_checkpoint(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(0, f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(0, f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(4, f"{path}: unsupported version {version}")
    if len(data) != _HEADER.size + 8 * count:
        raise FormatError(_HEADER.size, f"{path}: expected {count} float64 values")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)


def fmt_float(x) -> str:
    # repr round-trips exactly and always uses '.' as decimal separator
    return repr(float(x))


def write_runlog_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNLOG_FIELDS)
        for r in records:
            w.writerow([r.step, fmt_float(r.loss), fmt_float(r.accuracy),
                        "" if r.sigma_top is None else fmt_float(r.sigma_top),
                        fmt_float(r.delta_w_norm)])


def read_runlog_csv(path):
    from .unlearn import StepRecord

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUNLOG_FIELDS:
            raise FormatError(0, f"{path}: header {reader.fieldnames} != {list(RUNLOG_FIELDS)}")
        return [StepRecord(int(row["step"]), float(row["loss"]), float(row["accuracy"]),
                           float(row["sigma_top"]) if row["sigma_top"] else None,
                           float(row["delta_w_norm"]))
                for row in reader]


def write_table_csv(path, rows, columns=None):
    """Write a list of dicts; floats via :func:`fmt_float`."""
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return columns


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    return str(v)


def read_table_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

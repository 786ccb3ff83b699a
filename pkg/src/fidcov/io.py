"""CSV ingestion and small file writers."""
from __future__ import annotations

import csv
import math

import numpy as np

from .linalg import ObservationSet


class IngestError(ValueError):
    pass


def _parse_row(row, lineno, path):
    out = []
    for k, cell in enumerate(row):
        try:
            v = float(cell)
        except ValueError:
            raise IngestError(f"{path}:{lineno}: column {k + 1} is not numeric: {cell.strip()!r}") from None
        if not math.isfinite(v):
            raise IngestError(f"{path}:{lineno}: column {k + 1} is not finite: {cell.strip()!r}")
        out.append(v)
    return out


def _is_numeric(row):
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def read_matrix(path) -> tuple:
    """Rows of a numeric CSV plus the header (``None`` if absent).

    The first non-blank row is taken as a header when any of its cells is
    not a number.
    """
    rows, header, width = [], None, None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            if header is None and not rows and not _is_numeric(raw):
                header = [c.strip() for c in raw]
                width = len(header)
                continue
            if width is None:
                width = len(raw)
            elif len(raw) != width:
                raise IngestError(f"{path}:{lineno}: expected {width} fields, found {len(raw)}")
            rows.append(_parse_row(raw, lineno, path))
    if not rows:
        raise IngestError(f"{path}:1: no numeric rows")
    return np.array(rows, dtype=float), header


def ingest_csv(path) -> ObservationSet:
    """One observation per row; columns that are identically zero are rejected."""
    Y, _ = read_matrix(path)
    zero = np.flatnonzero(~Y.any(axis=0))
    if zero.size:
        raise IngestError(f"{path}:1: column(s) {', '.join(str(z + 1) for z in zero)} are identically zero")
    return ObservationSet(Y)


def read_square(path) -> np.ndarray:
    M, _ = read_matrix(path)
    if M.shape[0] != M.shape[1]:
        raise IngestError(f"{path}: expected a square matrix, got {M.shape[0]}x{M.shape[1]}")
    return M


def write_matrix(path, M, header=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        w.writerows(np.atleast_2d(np.asarray(M)).tolist())

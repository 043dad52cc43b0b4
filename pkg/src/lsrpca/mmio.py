"""Matrix Market (``.mtx``) and dense CSV interchange."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, StorageError
from .matrix import VALUE_DTYPE, as_csc, as_dense

_FIELDS = ("real", "integer", "pattern", "double")
_SYMMETRY = ("general", "symmetric", "skew-symmetric")


def _data_lines(fh, start_line):
    for lineno, line in enumerate(fh, start=start_line):
        text = line.strip()
        if not text or text.startswith("%"):
            continue
        yield lineno, text


def read_mtx(path):
    """Read a Matrix Market file.

    Coordinate files come back as canonical CSC matrices, array files as dense
    column-major float32 arrays.  Complex and Hermitian files are rejected.
    """
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot open {path}: {exc}") from exc
    with fh:
        banner = fh.readline()
        parts = banner.strip().split()
        if len(parts) != 5 or parts[0].lower() != "%%matrixmarket" or parts[1].lower() != "matrix":
            raise ParseError("missing '%%MatrixMarket matrix ...' banner", line=1, path=path)
        layout, field, symmetry = (s.lower() for s in parts[2:])
        if layout not in ("coordinate", "array"):
            raise ParseError(f"unsupported layout {layout!r}", line=1, path=path)
        if field not in _FIELDS:
            raise ParseError(f"unsupported field {field!r}", line=1, path=path)
        if symmetry not in _SYMMETRY:
            raise ParseError(f"unsupported symmetry {symmetry!r}", line=1, path=path)
        if layout == "array" and field == "pattern":
            raise ParseError("pattern field is only valid for coordinate layout", line=1, path=path)

        lines = _data_lines(fh, 2)
        try:
            lineno, size_line = next(lines)
        except StopIteration:
            raise ParseError("missing size line", line=2, path=path) from None
        try:
            dims = [int(t) for t in size_line.split()]
        except ValueError:
            raise ParseError(f"bad size line {size_line!r}", line=lineno, path=path) from None
        if layout == "coordinate":
            if len(dims) != 3:
                raise ParseError("coordinate size line needs 'rows cols nnz'", line=lineno, path=path)
            return _read_coordinate(lines, path, *dims, field, symmetry)
        if len(dims) != 2:
            raise ParseError("array size line needs 'rows cols'", line=lineno, path=path)
        return _read_array(lines, path, *dims, symmetry)


def _read_coordinate(lines, path, rows, cols, nnz, field, symmetry):
    ri = np.empty(nnz, dtype=np.int64)
    ci = np.empty(nnz, dtype=np.int64)
    vals = np.ones(nnz, dtype=np.float64)
    want = 2 if field == "pattern" else 3
    count = 0
    last = 2
    for lineno, text in lines:
        last = lineno
        if count >= nnz:
            raise ParseError(f"more than the declared {nnz} entries", line=lineno, path=path)
        tok = text.split()
        if len(tok) != want:
            raise ParseError(f"expected {want} fields, got {len(tok)}", line=lineno, path=path)
        try:
            i, j = int(tok[0]), int(tok[1])
            if want == 3:
                vals[count] = float(tok[2])
        except ValueError:
            raise ParseError(f"malformed entry {text!r}", line=lineno, path=path) from None
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise ParseError(f"index ({i}, {j}) outside {rows}x{cols}", line=lineno, path=path)
        if not np.isfinite(vals[count]):
            raise ParseError("non-finite value", line=lineno, path=path)
        ri[count], ci[count] = i - 1, j - 1
        count += 1
    if count != nnz:
        raise ParseError(f"declared {nnz} entries, found {count}", line=last, path=path)
    if symmetry != "general":
        off = ri != ci
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        ri, ci, vals = (
            np.concatenate([ri, ci[off]]),
            np.concatenate([ci, ri[off]]),
            np.concatenate([vals, sign * vals[off]]),
        )
    m = sp.coo_matrix((vals, (ri, ci)), shape=(rows, cols)).tocsc()
    return as_csc(m)


def _read_array(lines, path, rows, cols, symmetry):
    if symmetry == "general":
        expected = rows * cols
    else:
        if rows != cols:
            raise ParseError("symmetric array matrix must be square", path=path)
        expected = rows * (rows + 1) // 2 if symmetry == "symmetric" else rows * (rows - 1) // 2
    vals = np.empty(expected, dtype=np.float64)
    count = 0
    last = 2
    for lineno, text in lines:
        last = lineno
        if count >= expected:
            raise ParseError(f"more than the expected {expected} values", line=lineno, path=path)
        tok = text.split()
        if len(tok) != 1:
            raise ParseError(f"expected one value per line, got {len(tok)}", line=lineno, path=path)
        try:
            vals[count] = float(tok[0])
        except ValueError:
            raise ParseError(f"malformed value {text!r}", line=lineno, path=path) from None
        if not np.isfinite(vals[count]):
            raise ParseError("non-finite value", line=lineno, path=path)
        count += 1
    if count != expected:
        raise ParseError(f"expected {expected} values, found {count}", line=last, path=path)
    if symmetry == "general":
        return as_dense(vals.reshape((rows, cols), order="F"))
    out = np.zeros((rows, cols))
    it = iter(vals)
    for j in range(cols):
        for i in range(j if symmetry == "symmetric" else j + 1, rows):
            out[i, j] = next(it)
    sign = -1.0 if symmetry == "skew-symmetric" else 1.0
    out = out + sign * np.tril(out, -1).T
    return as_dense(out)


def _fmt(v) -> str:
    return str(np.float32(v))


def write_mtx(path, m):
    """Write a sparse matrix as coordinate/real/general, a dense one as array/real/general."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            if sp.issparse(m):
                coo = as_csc(m).tocoo()
                order = np.lexsort((coo.row, coo.col))
                fh.write("%%MatrixMarket matrix coordinate real general\n")
                fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
                for idx in order:
                    fh.write(f"{coo.row[idx] + 1} {coo.col[idx] + 1} {_fmt(coo.data[idx])}\n")
            else:
                arr = as_dense(m)
                fh.write("%%MatrixMarket matrix array real general\n")
                fh.write(f"{arr.shape[0]} {arr.shape[1]}\n")
                for v in arr.ravel(order="F"):
                    fh.write(_fmt(v) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_csv(path, delimiter=",", header=False) -> np.ndarray:
    """Read a small dense numeric CSV (``#`` comment lines allowed)."""
    path = Path(path)
    rows = []
    width = None
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        skipped_header = not header
        for record in reader:
            lineno = reader.line_num
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if record[0].lstrip().startswith("#"):
                continue
            if not skipped_header:
                skipped_header = True
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(f"expected {width} fields, got {len(record)}", line=lineno, path=path)
            try:
                row = [float(t) for t in record]
            except ValueError:
                raise ParseError(f"non-numeric field in {record!r}", line=lineno, path=path) from None
            if not all(np.isfinite(row)):
                raise ParseError("non-finite value", line=lineno, path=path)
            rows.append(row)
    if not rows:
        return np.zeros((0, 0), dtype=VALUE_DTYPE)
    return as_dense(np.array(rows))

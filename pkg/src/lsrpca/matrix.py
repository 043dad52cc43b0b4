"""In-core matrix representations and products.

Two storage forms are used throughout:

* dense: ``numpy.ndarray`` of ``float32`` in column-major (Fortran) order;
* sparse: ``scipy.sparse.csc_matrix`` with ``float32`` values and ``int64``
  indices, kept in canonical form (sorted unique row indices per column, no
  stored zeros).

Products accumulate in float64 and are rounded to the requested output dtype
at the end.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError

VALUE_DTYPE = np.float32
INDEX_DTYPE = np.int64


def is_sparse(x) -> bool:
    return sp.issparse(x)


def as_dense(x, *, check_finite: bool = True) -> np.ndarray:
    """Return ``x`` as a column-major float32 array (copying only if needed)."""
    if sp.issparse(x):
        x = x.toarray()
    arr = np.asarray(x)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    arr = np.asfortranarray(arr, dtype=VALUE_DTYPE)
    if check_finite and not np.isfinite(arr).all():
        raise ValueError("matrix contains NaN or Inf entries")
    return arr


def canonicalize(m: sp.csc_matrix) -> sp.csc_matrix:
    """Sort indices, merge duplicates, and drop explicit zeros in place."""
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    m.indptr = m.indptr.astype(INDEX_DTYPE, copy=False)
    m.indices = m.indices.astype(INDEX_DTYPE, copy=False)
    return m


def as_csc(x, *, check_finite: bool = True) -> sp.csc_matrix:
    """Return ``x`` as a canonical float32 CSC matrix."""
    if sp.issparse(x):
        m = sp.csc_matrix(x, dtype=VALUE_DTYPE, copy=True)
    else:
        arr = np.asarray(x)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
        m = sp.csc_matrix(arr.astype(VALUE_DTYPE, copy=False))
    if check_finite and not np.isfinite(m.data).all():
        raise ValueError("matrix contains NaN or Inf entries")
    return canonicalize(m)


def csc_from_arrays(rows: int, cols: int, col_ptr, row_idx, values) -> sp.csc_matrix:
    """Build a CSC matrix from raw arrays, validating the structural invariants.

    Explicit zeros are kept; call :func:`canonicalize` to drop them.
    """
    col_ptr = np.asarray(col_ptr, dtype=INDEX_DTYPE)
    row_idx = np.asarray(row_idx, dtype=INDEX_DTYPE)
    values = np.asarray(values, dtype=VALUE_DTYPE)
    if col_ptr.shape != (cols + 1,):
        raise ShapeError(f"col_ptr has length {col_ptr.size}, expected {cols + 1}")
    nnz = int(col_ptr[-1]) if cols >= 0 else 0
    if col_ptr[0] != 0 or np.any(np.diff(col_ptr) < 0):
        raise ValueError("col_ptr must start at 0 and be nondecreasing")
    if row_idx.size != nnz or values.size != nnz:
        raise ShapeError(
            f"col_ptr declares nnz={nnz} but row_idx has {row_idx.size} and values {values.size}"
        )
    if nnz and (row_idx.min() < 0 or row_idx.max() >= rows):
        raise ValueError("row index out of range")
    if nnz > 1:
        within = np.ones(nnz - 1, dtype=bool)
        bounds = col_ptr[1:-1]
        bounds = bounds[(bounds > 0) & (bounds < nnz)]
        within[bounds - 1] = False
        if np.any(np.diff(row_idx)[within] <= 0):
            raise ValueError("row indices must be strictly increasing within each column")
    m = sp.csc_matrix((values, row_idx, col_ptr), shape=(rows, cols))
    m.indptr = m.indptr.astype(INDEX_DTYPE, copy=False)
    m.indices = m.indices.astype(INDEX_DTYPE, copy=False)
    return m


def _shape(x):
    return x.shape if sp.issparse(x) else np.shape(x)


def _check_inner(a_shape, b_shape, op: str):
    inner_a = a_shape[0] if op == "aTb" else a_shape[1]
    if inner_a != b_shape[0]:
        raise ShapeError(f"cannot form {op} for shapes {tuple(a_shape)} and {tuple(b_shape)}")


def _promote(x):
    if sp.issparse(x):
        return x.astype(np.float64) if x.dtype != np.float64 else x
    return np.asarray(x, dtype=np.float64)


def matmul(a, b, *, dtype=VALUE_DTYPE) -> np.ndarray:
    """Dense product ``a @ b``.

    ``a`` may be sparse (CSC) and ``b`` dense, or vice versa; the sparse
    operand is traversed column by column over its stored nonzeros, so the
    cost scales with ``nnz * cols(b)``.  Sparse-by-sparse is not supported.
    """
    a_shape, b_shape = _shape(a), _shape(b)
    if len(a_shape) != 2 or len(b_shape) != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a_shape} and {b_shape}")
    _check_inner(a_shape, b_shape, "ab")
    if sp.issparse(a) and sp.issparse(b):
        raise TypeError("sparse x sparse products are not supported")
    if sp.issparse(b):
        # a @ b == (b.T @ a.T).T keeps the sparse operand on the left
        out = (_promote(b).T @ _promote(a).T).T
    else:
        out = _promote(a) @ _promote(b)
    return np.asfortranarray(out, dtype=dtype)


def transpose_matmul(a, b, *, dtype=VALUE_DTYPE) -> np.ndarray:
    """Dense product ``a.T @ b`` without materializing ``a.T``."""
    a_shape, b_shape = _shape(a), _shape(b)
    if len(a_shape) != 2 or len(b_shape) != 2:
        raise ShapeError(f"transpose_matmul needs 2-D operands, got {a_shape} and {b_shape}")
    _check_inner(a_shape, b_shape, "aTb")
    if sp.issparse(a) and sp.issparse(b):
        raise TypeError("sparse x sparse products are not supported")
    if sp.issparse(b):
        out = (_promote(b).T @ _promote(a)).T
    else:
        out = _promote(a).T @ _promote(b)
    return np.asfortranarray(out, dtype=dtype)


def vstack(blocks):
    """Concatenate row blocks; the result is sparse iff every block is sparse."""
    blocks = list(blocks)
    if not blocks:
        raise ValueError("nothing to stack")
    if all(sp.issparse(b) for b in blocks):
        # no canonicalize: explicit zeros written by sparse normalization survive
        m = sp.vstack(blocks, format="csc", dtype=VALUE_DTYPE)
        m.sort_indices()
        m.indptr = m.indptr.astype(INDEX_DTYPE, copy=False)
        m.indices = m.indices.astype(INDEX_DTYPE, copy=False)
        return m
    return as_dense(np.vstack([b.toarray() if sp.issparse(b) else np.asarray(b) for b in blocks]))


def to_array(x, dtype=np.float64) -> np.ndarray:
    """Plain C-ordered ndarray copy of a dense or sparse matrix."""
    if sp.issparse(x):
        return x.toarray().astype(dtype, copy=False)
    return np.array(x, dtype=dtype)


def nbytes(x) -> int:
    if sp.issparse(x):
        return x.data.nbytes + x.indices.nbytes + x.indptr.nbytes
    return np.asarray(x).nbytes

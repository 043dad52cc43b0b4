import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lsrpca.errors import ShapeError
from lsrpca.matrix import (
    as_csc, as_dense, canonicalize, csc_from_arrays, matmul, transpose_matmul, vstack,
)


def loop_matmul(a, b):
    """Triple-loop oracle."""
    n, m = a.shape
    _, k = b.shape
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            acc = 0.0
            for t in range(m):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def densify(m):
    """Dict-of-entries densification, independent of scipy's toarray."""
    out = np.zeros(m.shape)
    for j in range(m.shape[1]):
        for t in range(m.indptr[j], m.indptr[j + 1]):
            out[m.indices[t], j] += m.data[t]
    return out


small = st.integers(1, 6)
entries = st.floats(-10, 10, allow_nan=False, width=32)


@st.composite
def operands(draw, sparse_left):
    n, m, k = draw(small), draw(small), draw(small)
    a = draw(arrays(np.float32, (n, m), elements=entries))
    b = draw(arrays(np.float32, (m, k), elements=entries))
    if sparse_left:
        a[np.abs(a) < 5] = 0
    return a, b


@given(operands(sparse_left=True))
def test_sparse_dense_product_matches_loop(ab):
    a, b = ab
    got = matmul(as_csc(a), b, dtype=np.float64)
    np.testing.assert_allclose(got, loop_matmul(a, b), rtol=1e-9, atol=1e-9)


@given(operands(sparse_left=False))
def test_dense_sparse_product_matches_loop(ab):
    a, b = ab
    bs = b.copy()
    bs[np.abs(bs) < 5] = 0
    got = matmul(a, as_csc(bs), dtype=np.float64)
    np.testing.assert_allclose(got, loop_matmul(a, bs), rtol=1e-9, atol=1e-9)


@given(operands(sparse_left=True))
def test_transpose_matmul_matches_loop(ab):
    a, _ = ab
    c = np.arange(a.shape[0] * 3, dtype=np.float32).reshape(a.shape[0], 3)
    got = transpose_matmul(as_csc(a), c, dtype=np.float64)
    np.testing.assert_allclose(got, loop_matmul(a.T, c), rtol=1e-9, atol=1e-9)
    got = transpose_matmul(c, as_csc(a), dtype=np.float64)
    np.testing.assert_allclose(got, loop_matmul(c.T, a), rtol=1e-9, atol=1e-9)


def test_identity_sparse_times_dense_is_exact(rng):
    b = rng.standard_normal((4, 3)).astype(np.float32)
    assert np.array_equal(matmul(sp.identity(4, format="csc"), b), b)


def test_zero_columns_give_zero_output():
    a = csc_from_arrays(2, 3, [0, 0, 0, 0], [], [])
    out = matmul(a, np.ones((3, 2), dtype=np.float32))
    assert out.shape == (2, 2) and not out.any()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(4, 3\).*\(5, 2\)"):
        matmul(np.zeros((4, 3)), np.zeros((5, 2)))


def test_sparse_sparse_product_rejected():
    with pytest.raises(TypeError):
        matmul(sp.identity(3, format="csc"), sp.identity(3, format="csc"))


def test_product_is_float32_column_major_by_default(rng):
    out = matmul(rng.standard_normal((5, 4)), rng.standard_normal((4, 3)))
    assert out.dtype == np.float32 and out.flags.f_contiguous


def test_csc_from_arrays_keeps_explicit_zero_and_densifies():
    m = csc_from_arrays(3, 2, [0, 2, 3], [0, 2, 1], [1.5, 0.0, -2.0])
    assert m.nnz == 3
    np.testing.assert_array_equal(densify(m), [[1.5, 0], [0, -2.0], [0, 0]])
    assert m.indices.dtype == np.int64 and m.indptr.dtype == np.int64


@pytest.mark.parametrize(
    "col_ptr,rows,vals,err",
    [
        ([0, 2, 3], [2, 0, 1], [1, 2, 3], ValueError),  # unsorted rows in column 0
        ([0, 2, 3], [1, 1, 0], [1, 2, 3], ValueError),  # duplicate row
        ([0, 2, 3], [0, 5, 1], [1, 2, 3], ValueError),  # out of range
        ([0, 2], [0, 1], [1, 2], ShapeError),  # col_ptr too short
        ([0, 2, 4], [0, 1, 1], [1, 2, 3], ShapeError),  # nnz mismatch
        ([0, 3, 2], [0, 1, 2], [1, 2, 3], ValueError),  # decreasing col_ptr
    ],
)
def test_csc_from_arrays_rejects_broken_structure(col_ptr, rows, vals, err):
    with pytest.raises(err):
        csc_from_arrays(3, 2, col_ptr, rows, vals)


def test_rows_may_restart_at_column_boundary():
    m = csc_from_arrays(3, 3, [0, 2, 2, 4], [1, 2, 0, 2], [1, 2, 3, 4])
    np.testing.assert_array_equal(densify(m), [[0, 0, 3], [1, 0, 0], [2, 0, 4]])


def test_canonicalize_merges_duplicates_and_drops_zeros():
    coo = sp.coo_matrix(([1.0, 2.0, 0.0], ([0, 0, 1], [0, 0, 1])), shape=(2, 2))
    m = canonicalize(coo.tocsc())
    assert m.nnz == 1 and m[0, 0] == 3.0


def test_as_dense_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_dense(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        as_csc(np.array([[np.inf, 0.0]]))


@given(arrays(np.float32, st.tuples(small, small), elements=entries))
def test_csc_roundtrip_is_exact(a):
    a[np.abs(a) < 3] = 0
    assert np.array_equal(densify(as_csc(a)), a.astype(np.float64))


def test_vstack_sparse_preserves_explicit_zeros():
    a = csc_from_arrays(1, 2, [0, 1, 1], [0], [0.0])
    b = csc_from_arrays(1, 2, [0, 0, 1], [0], [3.0])
    m = vstack([a, b])
    assert sp.issparse(m) and m.nnz == 2
    np.testing.assert_array_equal(densify(m), [[0, 0], [0, 3]])


def test_vstack_mixed_is_dense(rng):
    d = rng.standard_normal((2, 3))
    m = vstack([as_csc(d), d])
    assert not sp.issparse(m) and m.shape == (4, 3)

"""Householder QR and the incremental tall-and-skinny QR used by LS-RPCA.

All factors are computed in float64.  The sign convention is pinned: every
returned R has a nonnegative diagonal (rows of R and columns of Q are flipped
after triangularization), which makes R unique for full-column-rank input and
lets incremental and in-core factors be compared elementwise.

The incremental path (:func:`qr_init` / :func:`qr_update`) keeps only the
K-bar x K-bar triangular factor.  Q is never formed there and no function
returns it from a :class:`QrState`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, RankDeficientError, ShapeError

RANK_TOL = 1e-6


@dataclass(frozen=True)
class QrResult:
    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class QrState:
    r: np.ndarray
    rows_absorbed: int

    @property
    def kbar(self) -> int:
        return self.r.shape[0]


def _householder_vector(alpha: float, tail: np.ndarray):
    """Reflector ``H = I - tau v v^T`` (``v[0] = 1``) mapping ``[alpha; tail]`` to ``[beta; 0]``.

    Returns ``None`` when ``tail`` is already zero.
    """
    tail_norm = np.linalg.norm(tail)
    if tail_norm == 0.0:
        return None
    beta = -np.copysign(np.hypot(alpha, tail_norm), alpha)
    v_tail = tail / (alpha - beta)
    tau = (beta - alpha) / beta
    return beta, v_tail, tau


def _triangularize(a: np.ndarray):
    """Overwrite ``a`` (M x N, float64) with its Householder R; return the reflectors."""
    m, n = a.shape
    reflectors = []
    for j in range(min(m - 1, n)):
        h = _householder_vector(a[j, j], a[j + 1 :, j])
        if h is None:
            reflectors.append(None)
            continue
        beta, v_tail, tau = h
        if j + 1 < n:
            block = a[j:, j + 1 :]
            w = block[0] + v_tail @ block[1:]
            block[0] -= tau * w
            block[1:] -= tau * np.outer(v_tail, w)
        a[j, j] = beta
        a[j + 1 :, j] = 0.0
        reflectors.append((v_tail, tau))
    return reflectors


def _diag_signs(r: np.ndarray) -> np.ndarray:
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return d


def householder_qr(a) -> QrResult:
    """Reduced QR of an M x N matrix with M >= N."""
    work = np.array(a, dtype=np.float64)
    if work.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {work.shape}")
    m, n = work.shape
    if m < n:
        raise ShapeError(f"householder_qr needs rows >= cols, got shape ({m}, {n})")
    reflectors = _triangularize(work)
    r = np.triu(work[:n, :n])
    q = np.eye(m, n)
    for j in range(len(reflectors) - 1, -1, -1):
        if reflectors[j] is None:
            continue
        v_tail, tau = reflectors[j]
        block = q[j:, :]
        w = block[0] + v_tail @ block[1:]
        block[0] -= tau * w
        block[1:] -= tau * np.outer(v_tail, w)
    signs = _diag_signs(r)
    r *= signs[:, None]
    r += 0.0  # -0.0 -> +0.0 below the diagonal
    q *= signs[None, :]
    return QrResult(q=q, r=r)


def householder_r(a) -> np.ndarray:
    """Only the R factor of :func:`householder_qr` (no Q accumulation)."""
    work = np.array(a, dtype=np.float64)
    m, n = work.shape
    if m < n:
        raise ShapeError(f"householder_r needs rows >= cols, got shape ({m}, {n})")
    _triangularize(work)
    r = np.triu(work[:n, :n])
    r *= _diag_signs(r)[:, None]
    r += 0.0
    return r


def qr_init(y1, kbar: int) -> QrState:
    """Start the incremental QR from the first projected slice ``Y_1``."""
    y1 = np.asarray(y1)
    if y1.ndim != 2 or y1.shape[1] != kbar:
        raise ShapeError(f"first slice projection has shape {y1.shape}, expected (*, {kbar})")
    if y1.shape[0] < kbar:
        raise PreconditionError(
            f"first slice has {y1.shape[0]} rows but the incremental QR needs at least "
            f"K-bar={kbar} rows in the first slice"
        )
    return QrState(r=householder_r(y1), rows_absorbed=y1.shape[0])


def qr_update(state: QrState, ys) -> QrState:
    """Absorb a new row block: R <- R factor of ``[R; Y_s]``.

    Column ``j``'s reflector touches only row ``j`` of the triangular top block
    (everything below the diagonal there is a structural zero) plus the rows of
    ``Y_s``, so the work per slice is O((K-bar + rows) * K-bar^2 / 2).
    """
    r = np.array(state.r, dtype=np.float64)
    y = np.array(ys, dtype=np.float64)
    k = r.shape[0]
    if y.ndim != 2 or y.shape[1] != k:
        raise ShapeError(f"slice projection has shape {y.shape}, expected (*, {k})")
    if y.shape[0] == 0:
        return state
    for j in range(k):
        h = _householder_vector(r[j, j], y[:, j])
        if h is None:
            continue
        beta, v_tail, tau = h
        if j + 1 < k:
            w = r[j, j + 1 :] + v_tail @ y[:, j + 1 :]
            r[j, j + 1 :] -= tau * w
            y[:, j + 1 :] -= tau * np.outer(v_tail, w)
        r[j, j] = beta
        y[:, j] = 0.0
    r = np.triu(r)
    r *= _diag_signs(r)[:, None]
    r += 0.0
    return QrState(r=r, rows_absorbed=state.rows_absorbed + y.shape[0])


def numerical_rank(r, tol: float = RANK_TOL) -> int:
    d = np.abs(np.diag(np.asarray(r)))
    if d.size == 0 or d.max() == 0.0:
        return 0
    return int(np.count_nonzero(d > tol * d.max()))


def check_full_rank(r, tol: float = RANK_TOL):
    """Raise :class:`RankDeficientError` if any |r_ii| <= tol * max |r_jj|."""
    k = np.asarray(r).shape[0]
    rank = numerical_rank(r, tol)
    if rank < k:
        raise RankDeficientError(
            f"triangular factor is numerically rank deficient: rank {rank} < K-bar={k} "
            f"(relative tolerance {tol:g}); use a smaller K-bar",
            rank=rank,
            size=k,
        )


def solve_rtranspose(r, a, *, overwrite_a: bool = False) -> np.ndarray:
    """Solve ``R^T B = A`` for B by forward substitution (R upper triangular).

    Computes ``(R^-1)^T A`` without forming the inverse.  With
    ``overwrite_a=True`` and a float64 ``a`` the solve runs in place.
    """
    r = np.asarray(r, dtype=np.float64)
    k = r.shape[0]
    if r.shape != (k, k):
        raise ShapeError(f"R must be square, got {r.shape}")
    if np.shape(a)[0] != k:
        raise ShapeError(f"cannot solve R^T B = A with R {r.shape} and A {np.shape(a)}")
    check_full_rank(r)
    if overwrite_a and isinstance(a, np.ndarray) and a.dtype == np.float64:
        b = a
    else:
        b = np.array(a, dtype=np.float64, order="F")
    for i in range(k):
        if i:
            b[i] -= r[:i, i] @ b[:i]
        b[i] /= r[i, i]
    return b

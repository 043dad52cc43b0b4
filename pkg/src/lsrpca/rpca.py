"""Randomized PCA: the in-core baseline, the single-pass large-sample variant,
and exact truncated SVD for ground truth.

Power iterations are deliberately not offered.  Each would cost another full
pass over the data, which defeats the single-pass design of :func:`ls_rpca`;
oversampling (``kbar > k``) is the only accuracy knob.

Singular values stored in a :class:`ProjectionModel` are those of the small
matrix ``B``; they approximate the leading singular values of ``X`` but carry
no guarantee.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dgemm

from .errors import PreconditionError, RankDeficientError, ShapeError, StorageError
from .matrix import VALUE_DTYPE, as_dense, matmul, transpose_matmul
from .qr import check_full_rank, householder_qr, qr_init, qr_update, solve_rtranspose
from .rng import GENERATOR_VERSION
from .sketch import gaussian_matrix
from .store import SliceStore, SliceWriter, decode_matrix, encode_matrix, slice_iter

log = logging.getLogger(__name__)

METHODS = ("rp", "rpca_baseline", "ls_rpca", "exact_pca")
MODEL_MAGIC = b"LSRPCAMD"
MODEL_VERSION = 1
_MODEL_HEAD = struct.Struct("<8sIIQ")

# float64 elements per row block in the dense LS-RPCA kernel (128 KiB)
BLOCK_ELEMS = 1 << 14
SVD_TOL = 1e-12


def parse_oversample(spec) -> str:
    """Normalize an oversampling spec to ``minimal``, ``double`` or ``fixed:N``."""
    if isinstance(spec, int):
        return f"fixed:{spec}"
    text = str(spec).strip().lower()
    if text in ("minimal", "double"):
        return text
    if text.startswith("fixed:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad oversampling spec {spec!r}") from None
        if n < 1:
            raise ValueError(f"fixed oversampling must be positive, got {n}")
        return f"fixed:{n}"
    raise ValueError(f"oversampling must be minimal, double or fixed:N, got {spec!r}")


def resolve_kbar(k: int, oversample="minimal") -> int:
    mode = parse_oversample(oversample)
    if mode == "minimal":
        return k
    if mode == "double":
        return 2 * k
    kbar = int(mode.split(":")[1])
    if kbar < k:
        raise PreconditionError(f"fixed K-bar={kbar} is smaller than K={k}")
    return kbar


@dataclass
class ProjectionModel:
    """A fitted P x K reduction ``X -> X V``.

    For ``method == "rp"`` the matrix ``v`` is ``Omega / sqrt(K)`` and makes no
    orthonormality claim; for the PCA-type methods its columns are orthonormal
    and sign-canonical (largest-magnitude entry positive).
    """

    v: np.ndarray
    singular_values: np.ndarray
    method: str
    k: int
    kbar: int
    seed: int | None = None
    oversampling_mode: str = "minimal"
    norm_stats: str | None = None
    generator_version: str = GENERATOR_VERSION
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.kbar < self.k:
            raise ValueError(f"kbar={self.kbar} < k={self.k}")
        if self.v.shape[1] != self.k:
            raise ShapeError(f"v has {self.v.shape[1]} columns, expected k={self.k}")

    @property
    def p(self) -> int:
        return self.v.shape[0]

    def header(self) -> dict:
        return {
            "format_version": MODEL_VERSION,
            "method": self.method,
            "p": int(self.p),
            "k": int(self.k),
            "kbar": int(self.kbar),
            "seed": None if self.seed is None else int(self.seed),
            "oversampling_mode": self.oversampling_mode,
            "singular_values": [float(s) for s in self.singular_values],
            "norm_stats": self.norm_stats,
            "generator_version": self.generator_version,
        }

    def save(self, path):
        """Write the model: fixed head, JSON header, then V (omitted for rp models)."""
        header = self.header()
        blob = b"" if self.method == "rp" else encode_matrix(self.v, "dense")
        if blob:
            header["v_sha256"] = hashlib.sha256(blob).hexdigest()
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        data = _MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, 0, len(hbytes)) + hbytes + blob
        try:
            Path(path).write_bytes(data)
        except OSError as exc:
            raise StorageError(f"cannot write model {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ProjectionModel":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read model {path}: {exc}") from exc
        if len(data) < _MODEL_HEAD.size:
            raise StorageError(f"{path}: truncated model file")
        magic, version, _, hlen = _MODEL_HEAD.unpack_from(data, 0)
        if magic != MODEL_MAGIC or version != MODEL_VERSION:
            raise StorageError(f"{path}: not a version-{MODEL_VERSION} projection model")
        off = _MODEL_HEAD.size
        header = json.loads(data[off : off + hlen].decode("utf-8"))
        blob = data[off + hlen :]
        if header["method"] == "rp":
            if header["generator_version"] != GENERATOR_VERSION:
                raise StorageError(
                    f"{path}: sketch generator {header['generator_version']} cannot be "
                    f"regenerated by {GENERATOR_VERSION}"
                )
            v = rp_matrix(header["p"], header["k"], header["seed"])
        else:
            if hashlib.sha256(blob).hexdigest() != header.get("v_sha256"):
                raise StorageError(f"{path}: projection matrix checksum mismatch")
            v = np.asfortranarray(decode_matrix(blob), dtype=VALUE_DTYPE)
        return cls(
            v=v,
            singular_values=np.asarray(header["singular_values"], dtype=np.float64),
            method=header["method"],
            k=header["k"],
            kbar=header["kbar"],
            seed=header["seed"],
            oversampling_mode=header["oversampling_mode"],
            norm_stats=header["norm_stats"],
            generator_version=header["generator_version"],
        )


def canonical_signs(v: np.ndarray) -> np.ndarray:
    """Per-column signs that make each column's largest-magnitude entry positive."""
    idx = np.argmax(np.abs(v), axis=0)
    s = np.sign(v[idx, np.arange(v.shape[1])])
    s[s == 0] = 1.0
    return s


def _svd_wide(b: np.ndarray, k: int):
    """Leading ``k`` singular triplets of a short-wide matrix via its Gram matrix.

    Returns ``(sigma, v)`` with ``v`` (P x k, float64) sign-canonical.
    """
    gram = b @ b.T
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:k]
    sigma = np.sqrt(np.clip(evals[order], 0.0, None))
    if sigma.size and sigma[-1] <= SVD_TOL * max(sigma[0], np.finfo(float).tiny):
        raise RankDeficientError(
            f"B has numerical rank below K={k}; reduce K", rank=int(np.sum(sigma > SVD_TOL * sigma[0])), size=k
        )
    u = evecs[:, order]
    v = np.empty((b.shape[1], k), dtype=np.float64, order="F")
    for j in range(k):
        v[:, j] = (b.T @ u[:, j]) / sigma[j]
    v *= canonical_signs(v)[None, :]
    return sigma, v


def exact_truncated_svd(x, k: int):
    """Rank-``k`` truncated SVD ``(u, sigma, v)`` of an in-core matrix.

    Uses the eigen-decomposition of the smaller Gram matrix; intended for
    oracle-sized inputs.  Columns of ``v`` are sign-canonical.
    """
    a = x.toarray() if sp.issparse(x) else np.asarray(x)
    a = np.asarray(a, dtype=np.float64)
    n, p = a.shape
    if k < 1 or k > min(n, p):
        raise ShapeError(f"k={k} must lie in [1, min(N, P)={min(n, p)}]")
    if p <= n:
        evals, evecs = np.linalg.eigh(a.T @ a)
        order = np.argsort(evals)[::-1][:k]
        sigma = np.sqrt(np.clip(evals[order], 0.0, None))
        v = evecs[:, order]
        s = canonical_signs(v)
        v = v * s[None, :]
        av = a @ v
        u = np.divide(av, sigma[None, :], out=np.zeros_like(av), where=sigma[None, :] > 0)
    else:
        evals, evecs = np.linalg.eigh(a @ a.T)
        order = np.argsort(evals)[::-1][:k]
        sigma = np.sqrt(np.clip(evals[order], 0.0, None))
        u = evecs[:, order]
        atu = a.T @ u
        v = np.divide(atu, sigma[None, :], out=np.zeros_like(atu), where=sigma[None, :] > 0)
        s = canonical_signs(v)
        v = v * s[None, :]
        u = u * s[None, :]
    return u, sigma, v


def range_finder(x, kbar: int, seed: int):
    """Steps 1-3 of baseline randomized PCA: ``Y = X Omega`` and its thin QR.

    Returns ``(q, r, omega)``.  Raises :class:`RankDeficientError` when Y is
    numerically rank deficient.
    """
    n, p = x.shape
    if kbar < 1 or kbar > min(n, p):
        raise ShapeError(f"kbar={kbar} must lie in [1, min(N, P)={min(n, p)}]")
    omega = gaussian_matrix(p, kbar, seed)
    y = matmul(x, omega, dtype=np.float64)
    res = householder_qr(y)
    check_full_rank(res.r)
    return res.q, res.r, omega


def baseline_rpca(x, k: int, kbar: int, seed: int, oversampling_mode=None) -> ProjectionModel:
    """In-core randomized PCA: Omega, Y = X Omega, QR(Y), B = Q^T X, SVD(B), truncate."""
    if sp.issparse(x):
        x = x.tocsc()
    else:
        x = as_dense(x)
    if k < 1 or k > kbar:
        raise ShapeError(f"need 1 <= k <= kbar, got k={k}, kbar={kbar}")
    q, _, _ = range_finder(x, kbar, seed)
    b = transpose_matmul(q, x, dtype=np.float64)
    sigma, v = _svd_wide(b, k)
    return ProjectionModel(
        v=np.asfortranarray(v, dtype=VALUE_DTYPE),
        singular_values=sigma,
        method="rpca_baseline",
        k=k,
        kbar=kbar,
        seed=int(seed),
        oversampling_mode=oversampling_mode or _mode_label(k, kbar),
    )


def _mode_label(k, kbar):
    if kbar == k:
        return "minimal"
    if kbar == 2 * k:
        return "double"
    return f"fixed:{kbar}"


def _absorb_dense(xs, omega, acc, state, kbar):
    """Fold one dense slice into the accumulator and the running R, in row blocks."""
    rows, p = xs.shape
    step = max(kbar, BLOCK_ELEMS // max(p, 1))
    start = 0
    while start < rows:
        stop = min(rows, start + step)
        if state is None:
            stop = max(stop, min(rows, start + kbar))
        block = np.array(xs[start:stop], dtype=np.float64, order="F")
        yb = np.asfortranarray(block @ omega)
        # acc += yb^T block, accumulated in place
        dgemm(1.0, yb, block, beta=1.0, c=acc, trans_a=True, overwrite_c=True)
        state = qr_init(yb, kbar) if state is None else qr_update(state, yb)
        del block, yb
        start = stop
    return state


def _absorb_sparse(xs, omega, acc, state, kbar):
    xs64 = xs.astype(np.float64)
    ys = np.asarray(xs64 @ omega)
    p = xs.shape[1]
    step = max(64, math.ceil(p / 8))
    for c0 in range(0, p, step):
        c1 = min(p, c0 + step)
        acc[:, c0:c1] += np.asarray(xs64[:, c0:c1].T @ ys).T
    return qr_init(ys, kbar) if state is None else qr_update(state, ys)


def ls_rpca(store: SliceStore, k: int, kbar: int, seed: int, oversampling_mode=None, *, on_final_r=None) -> ProjectionModel:
    """Large-sample randomized PCA in a single pass over a slice store.

    Per slice ``s``: ``Y_s = X_s Omega``, ``A += Y_s^T X_s`` and
    ``R <- R([R; Y_s])``.  At the end ``B = (R^-1)^T A`` is obtained by forward
    substitution and its SVD yields V.  Neither Y nor Q is ever materialized.

    Resident state is Omega and A (both P x K-bar, float64), R (K-bar x
    K-bar), and one slice with a bounded row-block workspace.
    """
    p = store.cols
    if k < 1 or k > kbar:
        raise ShapeError(f"need 1 <= k <= kbar, got k={k}, kbar={kbar}")
    if kbar > p:
        raise PreconditionError(f"K-bar={kbar} exceeds the number of columns P={p}")
    if store.n_slices == 0:
        raise PreconditionError("store is empty")
    if store.slice_row_counts[0] < kbar:
        raise PreconditionError(
            f"first slice has {store.slice_row_counts[0]} rows; LS-RPCA needs at least "
            f"K-bar={kbar} rows in the first slice (repartition the store or lower K-bar)"
        )
    t0 = time.perf_counter()
    bytes0 = store.bytes_read
    omega = gaussian_matrix(p, kbar, seed).astype(np.float64, order="F")
    acc = np.zeros((kbar, p), dtype=np.float64, order="F")
    state = None
    for _, xs in slice_iter(store):
        if sp.issparse(xs):
            state = _absorb_sparse(xs, omega, acc, state, kbar)
        else:
            state = _absorb_dense(xs, omega, acc, state, kbar)
        del xs
    del omega
    log.info(
        "ls_rpca pass: %d slices, %d bytes read, %.3fs",
        store.n_slices, store.bytes_read - bytes0, time.perf_counter() - t0,
    )
    if on_final_r is not None:
        on_final_r(state.r)
    try:
        b = solve_rtranspose(state.r, acc, overwrite_a=True)
    except RankDeficientError as exc:
        raise RankDeficientError(
            f"LS-RPCA with K-bar={kbar}: {exc}", rank=exc.rank, size=exc.size
        ) from exc
    sigma, v = _svd_wide(b, k)
    del b, acc
    v32 = np.asfortranarray(v, dtype=VALUE_DTYPE)
    return ProjectionModel(
        v=v32,
        singular_values=sigma,
        method="ls_rpca",
        k=k,
        kbar=kbar,
        seed=int(seed),
        oversampling_mode=oversampling_mode or _mode_label(k, kbar),
        info={"rows": state.rows_absorbed, "seconds": time.perf_counter() - t0},
    )


def exact_pca(store: SliceStore, k: int) -> ProjectionModel:
    """Exact top-``k`` right singular vectors from the streamed P x P Gram matrix."""
    p = store.cols
    if k < 1 or k > min(p, store.n_total):
        raise ShapeError(f"k={k} must lie in [1, min(N, P)]")
    gram = np.zeros((p, p), dtype=np.float64)
    for _, xs in slice_iter(store):
        gram += transpose_matmul(xs, xs, dtype=np.float64) if sp.issparse(xs) else _gram_dense(xs)
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1][:k]
    v = evecs[:, order]
    v *= canonical_signs(v)[None, :]
    return ProjectionModel(
        v=np.asfortranarray(v, dtype=VALUE_DTYPE),
        singular_values=np.sqrt(np.clip(evals[order], 0.0, None)),
        method="exact_pca",
        k=k,
        kbar=k,
        seed=None,
        oversampling_mode="-",
    )


def _gram_dense(xs):
    x = np.asarray(xs, dtype=np.float64)
    return x.T @ x


def rp_matrix(p: int, k: int, seed: int) -> np.ndarray:
    omega = gaussian_matrix(p, k, seed)
    return np.asfortranarray(omega.astype(np.float64) / math.sqrt(k), dtype=VALUE_DTYPE)


def rp_model(p: int, k: int, seed: int) -> ProjectionModel:
    """Random-projection model; V = Omega / sqrt(K), regenerated from the seed on load."""
    return ProjectionModel(
        v=rp_matrix(p, k, seed),
        singular_values=np.zeros(k),
        method="rp",
        k=k,
        kbar=k,
        seed=int(seed),
        oversampling_mode="-",
    )


def project(store: SliceStore, model: ProjectionModel, path, *, max_rows=None) -> SliceStore:
    """Stream ``X V`` slice by slice into a new dense N x K store."""
    if store.cols != model.p:
        raise ShapeError(f"store has {store.cols} columns but the model expects P={model.p}")
    writer = SliceWriter(path, model.k, "dense", max_rows=max_rows)
    for _, xs in slice_iter(store):
        writer.append(matmul(xs, model.v, dtype=np.float64))
    return writer.close()


def captured_energy(x, v) -> float:
    """Squared Frobenius norm of ``X V`` (in-core ``x`` or a store)."""
    if isinstance(x, SliceStore):
        return float(sum(np.sum(matmul(xs, v, dtype=np.float64) ** 2) for _, xs in slice_iter(x)))
    return float(np.sum(matmul(x, v, dtype=np.float64) ** 2))

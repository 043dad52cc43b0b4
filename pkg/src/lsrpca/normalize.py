"""Column standardization: ``(x - mean) / (2 * sd)``.

Two modes:

``sparse``
    statistics over the *nonzero* entries of each continuous column; only
    nonzeros are transformed, so the sparsity pattern is preserved exactly.
    Binary columns pass through unchanged.
``dense``
    statistics over all N entries of every column; the output is dense.

``sd`` is the population standard deviation (divide by n).  Columns with
``sd == 0`` are flagged constant and every transformed entry in them becomes
0.  In sparse mode a nonzero that maps to exactly 0 is kept as an explicit
stored zero, so nnz never changes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError, StorageError
from .matrix import INDEX_DTYPE, VALUE_DTYPE
from .store import SliceStore, SliceWriter, slice_iter

MODES = ("sparse", "dense", "none")
KINDS = ("continuous", "binary")
SIDECAR = "norm.json"


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    sd: np.ndarray
    mode: str
    column_kind: tuple
    count: np.ndarray

    @property
    def p(self) -> int:
        return self.mean.size

    @property
    def constant(self) -> np.ndarray:
        return self.sd == 0.0

    @property
    def passthrough(self) -> np.ndarray:
        """Columns left untouched by :func:`apply_norm`."""
        if self.mode == "none":
            return np.ones(self.p, dtype=bool)
        if self.mode == "sparse":
            return np.array([k == "binary" for k in self.column_kind], dtype=bool)
        return np.zeros(self.p, dtype=bool)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": [float(v) for v in self.mean],
            "sd": [float(v) for v in self.sd],
            "count": [int(v) for v in self.count],
            "column_kind": list(self.column_kind),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            sd=np.asarray(d["sd"], dtype=np.float64),
            mode=d["mode"],
            column_kind=tuple(d["column_kind"]),
            count=np.asarray(d["count"], dtype=np.int64),
        )

    def save(self, path):
        path = Path(path)
        if path.is_dir():
            path = path / SIDECAR
        try:
            path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> "NormStats":
        path = Path(path)
        if path.is_dir():
            path = path / SIDECAR
        return cls.from_dict(json.loads(path.read_text()))


def identity_stats(p: int) -> NormStats:
    """Dense-mode stats whose transform is the identity (mean 0, divisor 1)."""
    return NormStats(
        mean=np.zeros(p), sd=np.full(p, 0.5), mode="dense",
        column_kind=("continuous",) * p, count=np.zeros(p, dtype=np.int64),
    )


def _column_of_each_nonzero(m: sp.csc_matrix) -> np.ndarray:
    return np.repeat(np.arange(m.shape[1]), np.diff(m.indptr))


def _slice_moments(xs, mode):
    """Per-column (count, mean, M2) of one slice under ``mode``."""
    rows, p = xs.shape
    if sp.issparse(xs):
        col = _column_of_each_nonzero(xs)
        data = xs.data.astype(np.float64)
        if mode == "sparse":
            data_mask = data != 0.0
            col, data = col[data_mask], data[data_mask]
            count = np.bincount(col, minlength=p).astype(np.float64)
            total = np.bincount(col, weights=data, minlength=p)
            mean = np.divide(total, count, out=np.zeros(p), where=count > 0)
            m2 = np.bincount(col, weights=(data - mean[col]) ** 2, minlength=p)
        else:
            count = np.full(p, float(rows))
            total = np.bincount(col, weights=data, minlength=p)
            mean = total / rows if rows else np.zeros(p)
            nz_per_col = np.bincount(col, minlength=p)
            m2 = np.bincount(col, weights=(data - mean[col]) ** 2, minlength=p)
            m2 += (rows - nz_per_col) * mean**2
        return count, mean, m2
    x = np.asarray(xs, dtype=np.float64)
    if mode == "sparse":
        mask = x != 0.0
        count = mask.sum(axis=0).astype(np.float64)
        total = np.where(mask, x, 0.0).sum(axis=0)
        mean = np.divide(total, count, out=np.zeros(p), where=count > 0)
        m2 = np.where(mask, (x - mean) ** 2, 0.0).sum(axis=0)
        return count, mean, m2
    count = np.full(p, float(rows))
    mean = x.mean(axis=0) if rows else np.zeros(p)
    m2 = ((x - mean) ** 2).sum(axis=0)
    return count, mean, m2


def _merge(a, b):
    """Chan et al. pairwise merge of per-column (count, mean, M2)."""
    na, ma, m2a = a
    nb, mb, m2b = b
    n = na + nb
    delta = mb - ma
    safe = np.where(n > 0, n, 1.0)
    mean = ma + delta * nb / safe
    m2 = m2a + m2b + delta**2 * na * nb / safe
    return n, mean, m2


def fit_norm(store: SliceStore, mode: str = "dense", column_kinds=None) -> NormStats:
    """Fit per-column mean and population sd in one streaming pass."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    p = store.cols
    if column_kinds is None:
        column_kinds = ("continuous",) * p
    column_kinds = tuple(column_kinds)
    if len(column_kinds) != p:
        raise ShapeError(f"column_kinds has {len(column_kinds)} entries, store has P={p}")
    if any(k not in KINDS for k in column_kinds):
        raise ValueError(f"column kinds must be in {KINDS}")
    if mode == "none":
        return NormStats(np.zeros(p), np.full(p, 0.5), "none", column_kinds, np.zeros(p, dtype=np.int64))
    acc = (np.zeros(p), np.zeros(p), np.zeros(p))
    for _, xs in slice_iter(store):
        acc = _merge(acc, _slice_moments(xs, mode))
    n, mean, m2 = acc
    sd = np.sqrt(np.divide(m2, n, out=np.zeros(p), where=n > 0))
    sd[n == 0] = 0.0
    if mode == "sparse":
        binary = np.array([k == "binary" for k in column_kinds])
        mean[binary] = 0.0
        sd[binary] = 0.5
    return NormStats(mean=mean, sd=sd, mode=mode, column_kind=column_kinds, count=n.astype(np.int64))


def _scale(stats):
    """Per-column ``(shift, inverse divisor)``; constant columns get divisor 0."""
    inv = np.divide(1.0, 2.0 * stats.sd, out=np.zeros(stats.p), where=stats.sd > 0)
    shift = stats.mean.copy()
    keep = stats.passthrough
    shift[keep] = 0.0
    inv[keep] = 1.0
    return shift, inv


def transform_slice(xs, stats: NormStats):
    """Normalize one in-core slice; sparse mode keeps the input's form and pattern."""
    if xs.shape[1] != stats.p:
        raise ShapeError(f"slice has {xs.shape[1]} columns, stats have P={stats.p}")
    shift, inv = _scale(stats)
    if stats.mode == "none":
        return xs
    if stats.mode == "dense":
        x = xs.toarray() if sp.issparse(xs) else np.asarray(xs)
        out = (x.astype(np.float64) - shift) * inv
        return np.asfortranarray(out, dtype=VALUE_DTYPE)
    if sp.issparse(xs):
        out = sp.csc_matrix(xs, dtype=VALUE_DTYPE, copy=True)
        col = _column_of_each_nonzero(out)
        vals = out.data.astype(np.float64)
        nz = vals != 0.0
        vals[nz] = (vals[nz] - shift[col[nz]]) * inv[col[nz]]
        out.data = vals.astype(VALUE_DTYPE)
        out.indices = out.indices.astype(INDEX_DTYPE)
        out.indptr = out.indptr.astype(INDEX_DTYPE)
        return out
    x = np.asarray(xs, dtype=np.float64)
    out = np.where(x != 0.0, (x - shift) * inv, 0.0)
    return np.asfortranarray(out, dtype=VALUE_DTYPE)


def apply_norm(store: SliceStore, stats: NormStats, path, *, max_rows=None) -> SliceStore:
    """Stream the normalized store to ``path``.

    Dense mode always writes a dense store; sparse and none modes keep the
    input's storage kind.
    """
    if stats.p != store.cols:
        raise ShapeError(f"stats have P={stats.p} but the store has {store.cols} columns")
    kind = "dense" if stats.mode == "dense" else store.storage_kind
    writer = SliceWriter(path, store.cols, kind, max_rows=max_rows)
    for _, xs in slice_iter(store):
        writer.append(transform_slice(xs, stats))
    return writer.close()


def infer_column_kinds(store: SliceStore) -> tuple:
    """``binary`` for columns whose values all lie in {0, 1}, else ``continuous``."""
    binary = np.ones(store.cols, dtype=bool)
    for _, xs in slice_iter(store):
        if sp.issparse(xs):
            col = _column_of_each_nonzero(xs)
            bad = (xs.data != 0) & (xs.data != 1)
            binary[np.unique(col[bad])] = False
        else:
            x = np.asarray(xs)
            binary &= np.all((x == 0) | (x == 1), axis=0)
    return tuple("binary" if b else "continuous" for b in binary)

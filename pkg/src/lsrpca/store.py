"""On-disk horizontal slice storage.

A store is a directory::

    manifest.json
    slice_0000.bin
    slice_0001.bin
    ...

Each slice file is a self-describing little-endian binary blob.  The 32-byte
header is ``magic (4s) | version (u16) | kind (u16) | rows (i64) | cols (i64)
| nnz (i64)``; the payload follows immediately:

* dense  (kind 0): ``rows * cols`` float32 values, column-major;
* sparse (kind 1): ``col_ptr`` int64[cols + 1], ``row_idx`` int64[nnz],
  ``values`` float32[nnz].

The manifest records the SHA-256 of every slice file; :meth:`SliceStore.read_slice`
verifies it on every read.  Stores are immutable once written.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import CorruptSliceError, ShapeError, SliceNotFoundError, StorageError
from .matrix import INDEX_DTYPE, VALUE_DTYPE, as_csc, as_dense, csc_from_arrays, vstack

log = logging.getLogger(__name__)

MAGIC = b"LSRS"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHqqq")
KINDS = {"dense": 0, "sparse": 1}
KIND_NAMES = {v: k for k, v in KINDS.items()}
MANIFEST = "manifest.json"


def slice_filename(index: int) -> str:
    return f"slice_{index:04d}.bin"


def encode_matrix(m, kind: str) -> bytes:
    """Serialize one matrix into the slice binary format."""
    if kind == "dense":
        arr = as_dense(m)
        rows, cols = arr.shape
        header = HEADER.pack(MAGIC, FORMAT_VERSION, KINDS[kind], rows, cols, rows * cols)
        return header + arr.astype("<f4").tobytes(order="F")
    if kind == "sparse":
        csc = m if sp.isspmatrix_csc(m) else as_csc(m)
        rows, cols = csc.shape
        nnz = csc.nnz
        header = HEADER.pack(MAGIC, FORMAT_VERSION, KINDS[kind], rows, cols, nnz)
        return b"".join(
            [
                header,
                np.asarray(csc.indptr, dtype="<i8").tobytes(),
                np.asarray(csc.indices[:nnz], dtype="<i8").tobytes(),
                np.asarray(csc.data[:nnz], dtype="<f4").tobytes(),
            ]
        )
    raise ValueError(f"unknown storage kind {kind!r}")


def decode_matrix(buf: bytes, *, index=None):
    """Parse a slice blob; dense payloads are returned as zero-copy views of ``buf``."""
    if len(buf) < HEADER.size:
        raise CorruptSliceError(f"slice {index}: truncated header", index)
    magic, version, kind, rows, cols, nnz = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CorruptSliceError(f"slice {index}: bad magic {magic!r}", index)
    if version != FORMAT_VERSION:
        raise CorruptSliceError(f"slice {index}: unsupported format version {version}", index)
    off = HEADER.size
    if kind == KINDS["dense"]:
        if len(buf) != off + 4 * rows * cols:
            raise CorruptSliceError(f"slice {index}: payload size mismatch", index)
        arr = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=off)
        return arr.reshape((rows, cols), order="F")
    if kind == KINDS["sparse"]:
        if len(buf) != off + 8 * (cols + 1) + 12 * nnz:
            raise CorruptSliceError(f"slice {index}: payload size mismatch", index)
        col_ptr = np.frombuffer(buf, dtype="<i8", count=cols + 1, offset=off)
        off += 8 * (cols + 1)
        row_idx = np.frombuffer(buf, dtype="<i8", count=nnz, offset=off)
        off += 8 * nnz
        values = np.frombuffer(buf, dtype="<f4", count=nnz, offset=off)
        try:
            return csc_from_arrays(rows, cols, col_ptr, row_idx, values)
        except (ValueError, ShapeError) as exc:
            raise CorruptSliceError(f"slice {index}: {exc}", index) from exc
    raise CorruptSliceError(f"slice {index}: unknown kind code {kind}", index)


@dataclass
class SliceStore:
    """Handle on an on-disk N x P matrix split into S horizontal slices.

    ``read_counts[s]`` counts how many times slice ``s`` has been read through
    this handle; ``bytes_read`` totals the file bytes read.
    """

    path: Path
    n_total: int
    cols: int
    slice_row_counts: list
    storage_kind: str
    checksums: list
    slice_nnz: list
    read_counts: list = field(init=False)
    bytes_read: int = field(init=False, default=0)

    def __post_init__(self):
        self.path = Path(self.path)
        self.read_counts = [0] * len(self.slice_row_counts)
        if sum(self.slice_row_counts) != self.n_total:
            raise StorageError(
                f"{self.path}: slice row counts sum to {sum(self.slice_row_counts)}, "
                f"manifest says {self.n_total}"
            )

    @classmethod
    def open(cls, path) -> "SliceStore":
        path = Path(path)
        mpath = path / MANIFEST
        if not mpath.exists():
            raise SliceNotFoundError(f"no slice store at {path} (missing {MANIFEST})")
        try:
            meta = json.loads(mpath.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"unreadable manifest {mpath}: {exc}") from exc
        if meta.get("format") != "lsrpca-slicestore":
            raise StorageError(f"{mpath} is not a slice-store manifest")
        slices = meta["slices"]
        return cls(
            path=path,
            n_total=int(meta["n_total"]),
            cols=int(meta["cols"]),
            slice_row_counts=[int(s["rows"]) for s in slices],
            storage_kind=meta["kind"],
            checksums=[s["sha256"] for s in slices],
            slice_nnz=[int(s["nnz"]) for s in slices],
        )

    @property
    def n_slices(self) -> int:
        return len(self.slice_row_counts)

    @property
    def shape(self) -> tuple:
        return (self.n_total, self.cols)

    def slice_bytes(self, index: int) -> int:
        """In-memory payload bytes of slice ``index`` as stored (float32 values)."""
        rows = self.slice_row_counts[index]
        if self.storage_kind == "dense":
            return 4 * rows * self.cols
        return 8 * (self.cols + 1) + 12 * self.slice_nnz[index]

    @property
    def largest_slice_bytes(self) -> int:
        return max((self.slice_bytes(i) for i in range(self.n_slices)), default=0)

    def reset_counters(self):
        self.read_counts = [0] * self.n_slices
        self.bytes_read = 0

    def read_slice(self, index: int):
        fpath = self.path / slice_filename(index)
        try:
            buf = fpath.read_bytes()
        except FileNotFoundError as exc:
            raise SliceNotFoundError(f"slice {index} missing: {fpath}") from exc
        except OSError as exc:
            raise StorageError(f"cannot read slice {index} ({fpath}): {exc}") from exc
        self.read_counts[index] += 1
        self.bytes_read += len(buf)
        if hashlib.sha256(buf).hexdigest() != self.checksums[index]:
            raise CorruptSliceError(f"checksum mismatch in slice {index} ({fpath})", index)
        m = decode_matrix(buf, index=index)
        if m.shape != (self.slice_row_counts[index], self.cols):
            raise CorruptSliceError(
                f"slice {index} has shape {m.shape}, manifest says "
                f"({self.slice_row_counts[index]}, {self.cols})",
                index,
            )
        return m

    def __iter__(self):
        return slice_iter(self)

    def to_matrix(self):
        """Concatenate every slice in core (small stores and tests only)."""
        if self.n_slices == 0:
            if self.storage_kind == "sparse":
                return sp.csc_matrix((0, self.cols), dtype=VALUE_DTYPE)
            return np.zeros((0, self.cols), dtype=VALUE_DTYPE, order="F")
        return vstack(m for _, m in slice_iter(self))

    def to_array(self, dtype=np.float64) -> np.ndarray:
        m = self.to_matrix()
        return (m.toarray() if sp.issparse(m) else np.asarray(m)).astype(dtype)


def slice_iter(store: SliceStore):
    """Yield ``(index, matrix)`` for every slice in order, one resident at a time."""
    for index in range(store.n_slices):
        yield index, store.read_slice(index)


def _prepare_dir(path: Path):
    if path.exists():
        if not path.is_dir():
            raise StorageError(f"{path} exists and is not a directory")
        entries = list(path.iterdir())
        if entries and not (path / MANIFEST).exists():
            raise StorageError(f"refusing to overwrite non-store directory {path}")
        for entry in entries:
            if entry.name == MANIFEST or (entry.name.startswith("slice_") and entry.suffix == ".bin"):
                entry.unlink()
    else:
        path.mkdir(parents=True)


class SliceWriter:
    """Append row blocks to a new store.

    With ``max_rows`` set, appended blocks are re-chunked so that every slice
    except the last holds exactly ``max_rows`` rows; otherwise each appended
    block becomes one slice.
    """

    def __init__(self, path, cols: int, kind: str = "dense", max_rows=None):
        if kind not in KINDS:
            raise ValueError(f"unknown storage kind {kind!r}")
        if max_rows is not None and max_rows < 1:
            raise ValueError("max_rows must be >= 1")
        self.path = Path(path)
        self.cols = int(cols)
        self.kind = kind
        self.max_rows = max_rows
        self._entries = []
        self._pending = []
        self._pending_rows = 0
        self._closed = False
        try:
            _prepare_dir(self.path)
        except OSError as exc:
            if isinstance(exc, StorageError):
                raise
            raise StorageError(f"cannot create store at {self.path}: {exc}") from exc

    def _coerce(self, block):
        if self.kind == "dense":
            return as_dense(block)
        if sp.issparse(block):
            m = sp.csc_matrix(block, dtype=VALUE_DTYPE, copy=True)
            m.sort_indices()
            m.indptr = m.indptr.astype(INDEX_DTYPE)
            m.indices = m.indices.astype(INDEX_DTYPE)
            return m
        return as_csc(block)

    def append(self, block):
        if self._closed:
            raise StorageError("writer already closed")
        block = self._coerce(block)
        if block.shape[1] != self.cols:
            raise ShapeError(f"block has {block.shape[1]} columns, store has {self.cols}")
        if self.max_rows is None:
            self._write(block)
            return
        self._pending.append(block)
        self._pending_rows += block.shape[0]
        while self._pending_rows >= self.max_rows:
            merged = vstack(self._pending) if len(self._pending) > 1 else self._pending[0]
            head, tail = merged[: self.max_rows], merged[self.max_rows :]
            self._write(self._coerce(head))
            self._pending = [self._coerce(tail)] if tail.shape[0] else []
            self._pending_rows = tail.shape[0]

    def _write(self, block):
        index = len(self._entries)
        blob = encode_matrix(block, self.kind)
        fpath = self.path / slice_filename(index)
        try:
            with open(fpath, "wb") as fh:
                fh.write(blob)
        except OSError as exc:
            raise StorageError(f"failed writing {fpath}: {exc}") from exc
        nnz = block.nnz if sp.issparse(block) else block.shape[0] * block.shape[1]
        self._entries.append(
            {
                "file": fpath.name,
                "rows": int(block.shape[0]),
                "nnz": int(nnz),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )

    def close(self) -> SliceStore:
        if not self._closed:
            if self._pending_rows:
                merged = vstack(self._pending) if len(self._pending) > 1 else self._pending[0]
                self._write(self._coerce(merged))
            self._pending = []
            meta = {
                "format": "lsrpca-slicestore",
                "version": FORMAT_VERSION,
                "kind": self.kind,
                "n_total": sum(e["rows"] for e in self._entries),
                "cols": self.cols,
                "slices": self._entries,
            }
            try:
                (self.path / MANIFEST).write_text(json.dumps(meta, indent=1, sort_keys=True))
            except OSError as exc:
                raise StorageError(f"failed writing manifest in {self.path}: {exc}") from exc
            self._closed = True
        return SliceStore.open(self.path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()


def partition(x, max_rows_per_slice=None, path=None, *, row_counts=None, kind=None) -> SliceStore:
    """Write ``x`` to ``path`` as consecutive row slices.

    Either ``max_rows_per_slice`` (giving ``ceil(N / max_rows)`` slices) or an
    explicit ``row_counts`` sequence must be supplied.
    """
    if path is None:
        raise ValueError("partition needs an output path")
    if kind is None:
        kind = "sparse" if sp.issparse(x) else "dense"
    m = as_csc(x) if kind == "sparse" else as_dense(x)
    n = m.shape[0]
    if row_counts is None:
        if max_rows_per_slice is None or max_rows_per_slice < 1:
            raise ValueError("max_rows_per_slice must be >= 1")
        n_slices = math.ceil(n / max_rows_per_slice)
        row_counts = [min(max_rows_per_slice, n - i * max_rows_per_slice) for i in range(n_slices)]
    row_counts = [int(r) for r in row_counts]
    if sum(row_counts) != n or any(r < 1 for r in row_counts):
        raise ShapeError(f"row counts {row_counts} do not partition {n} rows")
    writer = SliceWriter(path, m.shape[1], kind)
    start = 0
    for r in row_counts:
        writer.append(m[start : start + r])
        start += r
    return writer.close()


def copy_store(store: SliceStore, path) -> SliceStore:
    """Byte-for-byte copy of a store directory."""
    path = Path(path)
    _prepare_dir(path)
    for i in range(store.n_slices):
        shutil.copyfile(store.path / slice_filename(i), path / slice_filename(i))
    shutil.copyfile(store.path / MANIFEST, path / MANIFEST)
    return SliceStore.open(path)


def scratch_dir() -> Path:
    """Scratch root from ``$LSRPCA_SCRATCH`` (defaults to the system temp dir)."""
    root = os.environ.get("LSRPCA_SCRATCH")
    if root:
        p = Path(root)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return Path(tempfile.gettempdir())

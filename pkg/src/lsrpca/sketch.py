"""Gaussian random projections."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .matrix import VALUE_DTYPE, matmul
from .rng import GENERATOR_VERSION, standard_normal
from .store import SliceStore, SliceWriter, slice_iter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianSketch:
    """A P x K matrix of i.i.d. N(0, 1) entries and its projection scale 1/sqrt(K).

    Only ``(seed, p, k, version)`` need to be persisted; :func:`make_gaussian`
    regenerates ``omega`` bit-exactly.
    """

    omega: np.ndarray
    seed: int
    scale: float
    version: str = GENERATOR_VERSION

    @property
    def p(self) -> int:
        return self.omega.shape[0]

    @property
    def k(self) -> int:
        return self.omega.shape[1]


def gaussian_matrix(p: int, k: int, seed: int) -> np.ndarray:
    """Column-major float32 P x K Gaussian matrix, filled row by row from the stream."""
    if p < 1 or k < 1:
        raise ValueError(f"sketch dimensions must be positive, got p={p}, k={k}")
    flat = standard_normal(seed, p * k, dtype=VALUE_DTYPE)
    return np.asfortranarray(flat.reshape(p, k))


def make_gaussian(p: int, k: int, seed: int) -> GaussianSketch:
    if k > p:
        log.warning("sketch width k=%d exceeds p=%d: this embeds rather than reduces", k, p)
    return GaussianSketch(omega=gaussian_matrix(p, k, seed), seed=int(seed), scale=1.0 / math.sqrt(k))


def rp_project(store: SliceStore, sketch: GaussianSketch, path, *, max_rows=None) -> SliceStore:
    """Stream ``(1/sqrt(K)) X Omega`` slice by slice into a new dense store."""
    if store.cols != sketch.p:
        raise ShapeError(f"store has {store.cols} columns but sketch expects P={sketch.p}")
    writer = SliceWriter(path, sketch.k, "dense", max_rows=max_rows)
    for _, xs in slice_iter(store):
        ys = matmul(xs, sketch.omega, dtype=np.float64)
        ys *= sketch.scale
        writer.append(ys)
    return writer.close()

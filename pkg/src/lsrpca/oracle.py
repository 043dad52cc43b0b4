"""Small-scale equivalence suite: single-pass LS-RPCA vs in-core randomized PCA.

With a shared Omega, LS-RPCA over any row partition must reproduce the
in-core algorithm (Q from a QR of ``X Omega``, SVD of ``Q^T X``) up to column
signs and floating-point round-off.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass

import numpy as np

from .rng import permutation, standard_normal, sub_seed
from .rpca import baseline_rpca, ls_rpca
from .store import partition

V_TOL = 1e-3
SIGMA_TOL = 1e-3


@dataclass(frozen=True)
class OracleResult:
    trial: int
    row_counts: tuple
    v_max_abs: float
    sigma_max_rel: float

    @property
    def passed(self) -> bool:
        return self.v_max_abs <= V_TOL and self.sigma_max_rel <= SIGMA_TOL


def low_rank_matrix(n, p, rank, seed):
    """``n x p`` float32 matrix of exact rank ``rank`` with a spread spectrum."""
    a = standard_normal(sub_seed(seed, "left"), n * rank).reshape(n, rank)
    b = standard_normal(sub_seed(seed, "right"), rank * p).reshape(rank, p)
    a *= np.linspace(1.0, 0.2, rank)
    return np.asfortranarray(a @ b, dtype=np.float32)


def random_row_counts(n, min_first, seed, max_slices=8):
    """Random composition of ``n`` whose first part has at least ``min_first`` rows."""
    n_slices = 1 + int(permutation(sub_seed(seed, "count"), max_slices)[0])
    cuts = np.sort(permutation(sub_seed(seed, "cuts"), n - min_first)[: n_slices - 1]) + min_first
    edges = np.concatenate([[0], cuts, [n]])
    return tuple(int(c) for c in np.diff(edges) if c > 0)


def sign_aligned_diff(v, ref) -> float:
    signs = np.sign(np.sum(v * ref, axis=0))
    signs[signs == 0] = 1.0
    return float(np.max(np.abs(v * signs - ref)))


def run_oracle(n_trials=20, n=400, p=50, rank=15, k=10, kbar=15, seed=0):
    results = []
    with tempfile.TemporaryDirectory(prefix="lsrpca-oracle-") as tmp:
        for t in range(n_trials):
            tseed = sub_seed(seed, "trial", t)
            x = low_rank_matrix(n, p, rank, tseed)
            counts = random_row_counts(n, kbar, tseed)
            store = partition(x, path=f"{tmp}/t{t}", row_counts=counts)
            omega_seed = sub_seed(tseed, "omega")
            got = ls_rpca(store, k, kbar, omega_seed)
            ref = baseline_rpca(x, k, kbar, omega_seed)
            v_diff = sign_aligned_diff(got.v.astype(np.float64), ref.v.astype(np.float64))
            s_rel = float(np.max(np.abs(got.singular_values - ref.singular_values) / ref.singular_values))
            results.append(OracleResult(t, counts, v_diff, s_rel))
    return results

"""Pinned, versioned random number generation.

Gaussian matrices are drawn from a Philox-4x64 counter stream keyed directly
by the seed (no seed hashing), converted to normals with the Box-Muller
transform.  Both steps are implemented here rather than delegated to
``numpy.random.Generator`` so the stream cannot drift between numpy releases.
Bump :data:`GENERATOR_VERSION` whenever the mapping from seed to values changes.
"""
from __future__ import annotations

import zlib

import numpy as np

GENERATOR_VERSION = "philox4x64-boxmuller-v1"

_KEY_TAG = 0x4C53525043410001  # fixed second key word
_MASK64 = (1 << 64) - 1
_CHUNK = 1 << 14  # raw draws per generation step


def _bitgen(seed: int) -> np.random.Philox:
    key = np.array([int(seed) & _MASK64, _KEY_TAG], dtype=np.uint64)
    return np.random.Philox(key=key)


def _uniform_open(raw: np.ndarray) -> np.ndarray:
    # 53 high bits, shifted half a step off zero so log() is finite
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def standard_normal(seed: int, size: int, dtype=np.float64, out=None) -> np.ndarray:
    """``size`` i.i.d. N(0, 1) draws, reproducible bit-for-bit from ``seed``."""
    if out is None:
        out = np.empty(size, dtype=dtype)
    bg = _bitgen(seed)
    filled = 0
    while filled < size:
        n_pairs = min(_CHUNK, (size - filled + 1) // 2)
        raw = bg.random_raw(2 * n_pairs)
        u1 = _uniform_open(raw[0::2])
        u2 = _uniform_open(raw[1::2])
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        block = np.empty(2 * n_pairs)
        block[0::2] = radius * np.cos(theta)
        block[1::2] = radius * np.sin(theta)
        take = min(2 * n_pairs, size - filled)
        out[filled : filled + take] = block[:take]
        filled += take
    return out


def sub_seed(root: int, *labels) -> int:
    """Derive a 63-bit child seed from a root seed and a path of labels.

    Labels may be strings or integers; the derivation goes through
    ``numpy.random.SeedSequence`` whose output is stable across versions.
    """
    key = []
    for label in labels:
        if isinstance(label, str):
            key.append(zlib.crc32(label.encode("utf-8")))
        else:
            key.append(int(label) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(root) & _MASK64, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def permutation(seed: int, n: int) -> np.ndarray:
    """Seeded permutation of ``range(n)`` (sort by pinned uniform keys)."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    raw = _bitgen(seed).random_raw(n)
    return np.argsort(raw, kind="stable").astype(np.int64)

"""Vector primitives, cosine geometry and seeded random streams."""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatch, NotNormalized, ZeroNorm

NORM_TOL = 1e-12
UNIT_TOL = 1e-6
# Above this dimension dot products are accumulated with math.fsum.
WIDE_DOT_DIM = 512


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if not n > NORM_TOL:
        raise ZeroNorm(f"cannot normalize vector with norm {n!r}")
    return v / n


def normalize_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if not np.all(norms > NORM_TOL):
        raise ZeroNorm("matrix has a row with (near) zero norm")
    return m / norms


def dot(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"dot of shapes {u.shape} and {v.shape}")
    if u.size >= WIDE_DOT_DIM:
        return math.fsum(u * v)
    return float(u @ v)


def is_unit(v, tol: float = UNIT_TOL) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def cosine_distance(u, v) -> float:
    """``1 - u.v`` for unit vectors, clamped to [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine distance of shapes {u.shape} and {v.shape}")
    if not (is_unit(u) and is_unit(v)):
        raise NotNormalized("cosine distance requires unit vectors")
    # Summation order is fixed so that d(u, v) == d(v, u) bit for bit.
    return min(2.0, max(0.0, 1.0 - math.fsum(u * v)))


def pairwise_cosine_distance(a, b) -> np.ndarray:
    """Matrix of ``1 - a_i.b_j``, clamped to [0, 2]. No unit check."""
    return np.clip(1.0 - np.asarray(a) @ np.asarray(b).T, 0.0, 2.0)


def chordal_distance(u, v) -> float:
    """Euclidean distance between unit vectors, ``sqrt(2 * cosine_distance)``.

    Unlike cosine distance this is a metric on the sphere.
    """
    return math.sqrt(2.0 * cosine_distance(u, v))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and an optional stream path.

    ``make_rng(seed, round, client)`` gives independent, reproducible child
    streams without sharing a generator between tasks.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))


def random_unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return normalize_rows(rng.standard_normal((n, d)))

"""Spreadout regularizer on the class embedding matrix, full and mined.

The full regularizer sums a squared hinge over *ordered* pairs, so every
unordered pair contributes twice. The mined variant keeps, for each active
class, only its k nearest classes within a candidate set and rewards their
squared distance with no margin.

The mined term can use either the squared Euclidean distance between unit
rows (``2 - 2 w_c.w_y``, the default) or the squared cosine distance
``(1 - w_c.w_y)^2``. Both rank neighbors identically; they differ in the
push they apply. The cosine form pushes far pairs hardest and nearly
ignores close ones, and its maximizer splits the classes into two antipodal
clusters, so it is kept only for comparison.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import KTooLarge, UnknownClass
from .mathcore import make_rng

DEFAULT_CANDIDATE_CAP = 4096


def _gram_hinge(W: np.ndarray, nu: float) -> np.ndarray:
    h = np.maximum(0.0, nu - 1.0 + W @ W.T)
    np.fill_diagonal(h, 0.0)
    return h


def reg_sp(W: np.ndarray, nu: float) -> float:
    W = np.asarray(W, dtype=np.float64)
    return float(np.sum(np.square(_gram_hinge(W, nu))))


def grad_reg_sp(W: np.ndarray, nu: float) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    # Each ordered pair (c, c') and (c', c) contributes 2 h w_{c'} to row c.
    return 4.0 * _gram_hinge(W, nu) @ W


def candidate_classes(num_classes: int, seed: int, round_index: int, cap: int = DEFAULT_CANDIDATE_CAP) -> np.ndarray:
    """All classes when there are at most ``cap``, else a seeded uniform sample of ``cap``."""
    if num_classes <= cap:
        return np.arange(num_classes)
    rng = make_rng(seed, 0x5EED, round_index)
    return np.sort(rng.choice(num_classes, size=cap, replace=False))


def _rank_rows(dist: np.ndarray, ids: np.ndarray, k: int, method: str) -> np.ndarray:
    """Positions of the k smallest entries per row, ordered by (distance, id)."""
    n, m = dist.shape
    out = np.empty((n, k), dtype=np.int64)
    for r in range(n):
        row = dist[r]
        if method == "partition" and k < m:
            kth = np.partition(row, k - 1)[k - 1]
            pool = np.flatnonzero(row <= kth)
        else:
            pool = np.arange(m)
        order = np.lexsort((ids[pool], row[pool]))
        out[r] = pool[order[:k]]
    return out


def mine_neighbors(
    W: np.ndarray,
    active: Iterable[int],
    k: int,
    candidates: Sequence[int] | None = None,
    method: str = "sort",
) -> dict[int, np.ndarray]:
    """Map each active class to its k nearest candidate classes (excluding itself).

    ``method="partition"`` narrows each row with a partial sort first; it
    returns exactly the same lists as the full sort, ties included.
    """
    W = np.asarray(W, dtype=np.float64)
    C = W.shape[0]
    cand = np.arange(C) if candidates is None else np.asarray(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    active = [int(c) for c in active]
    if any(not 0 <= c < C for c in active) or (cand.size and (cand[0] < 0 or cand[-1] >= C)):
        raise UnknownClass("class id outside the embedding matrix")
    if not active:
        return {}
    if k < 1:
        raise KTooLarge(f"k={k} must be at least 1")
    dist = 1.0 - W[active] @ W[cand].T
    out = {}
    for r, c in enumerate(active):
        mask = cand != c
        if k > int(mask.sum()):
            raise KTooLarge(f"k={k} exceeds the {int(mask.sum())} candidates available to class {c}")
        ids = cand[mask]
        pos = _rank_rows(dist[r : r + 1, mask], ids, k, method)[0]
        out[c] = ids[pos]
    return out


def nearest_classes(W: np.ndarray, c: int, k: int, method: str = "sort") -> list[int]:
    W = np.asarray(W)
    if k > W.shape[0] - 1:
        raise KTooLarge(f"k={k} but only {W.shape[0] - 1} other classes")
    return [int(i) for i in mine_neighbors(W, [c], k, method=method)[int(c)]]


DISTANCES = ("euclidean", "cosine")


def _mined_sq_distance(W, c, nbrs, distance):
    if distance == "euclidean":
        return np.sum(np.square(W[nbrs] - W[c]), axis=1)
    if distance == "cosine":
        cos_d = 1.0 - W[nbrs] @ W[c]
        return cos_d * cos_d
    raise ValueError(f"distance must be one of {DISTANCES}")


def reg_sp_top(
    W: np.ndarray,
    active: Iterable[int],
    candidates: Sequence[int] | None,
    k: int,
    distance: str = "euclidean",
) -> float:
    W = np.asarray(W, dtype=np.float64)
    total = 0.0
    for c, nbrs in mine_neighbors(W, active, k, candidates).items():
        total -= float(np.sum(_mined_sq_distance(W, c, nbrs, distance)))
    return total


def grad_reg_sp_top(
    W: np.ndarray,
    active: Iterable[int],
    candidates: Sequence[int] | None,
    k: int,
    distance: str = "euclidean",
    mined: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Gradient with the mined neighbor sets held fixed."""
    W = np.asarray(W, dtype=np.float64)
    if distance not in DISTANCES:
        raise ValueError(f"distance must be one of {DISTANCES}")
    if mined is None:
        mined = mine_neighbors(W, active, k, candidates)
    grad = np.zeros_like(W)
    for c in sorted(mined):
        nbrs = mined[c]
        if distance == "cosine":
            # d/dw_c of -(1 - w_c.w_y)^2 is 2 d w_y, and symmetrically for w_y.
            d = 1.0 - W[nbrs] @ W[c]
            grad[c] += 2.0 * d @ W[nbrs]
            np.add.at(grad, nbrs, 2.0 * d[:, None] * W[c][None, :])
        else:
            # d/dw_c of -|w_c - w_y|^2 is -2 (w_c - w_y).
            diff = W[c][None, :] - W[nbrs]
            grad[c] -= 2.0 * diff.sum(axis=0)
            np.add.at(grad, nbrs, 2.0 * diff)
    return grad


def min_pairwise_distance(W: np.ndarray) -> float:
    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] < 2:
        raise ValueError("need at least two rows")
    d = 1.0 - W @ W.T
    iu = np.triu_indices(W.shape[0], 1)
    return float(np.clip(d[iu].min(), 0.0, 2.0))

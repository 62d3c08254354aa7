"""Instance embedder g_theta and the cosine scorer ``W @ g``.

The embedder averages weighted token rows, runs them through an MLP with
ReLU on every layer but the last, and normalizes the output to unit norm.
Everything here works on batches; the single-instance functions are thin
wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NumericalFailure, ShapeMismatch, VocabOutOfRange, ZeroNorm
from .mathcore import NORM_TOL, UNIT_TOL, normalize_rows, random_unit_rows


@dataclass(frozen=True, eq=False)
class SparseInstance:
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != w.shape:
            raise ShapeMismatch("indices and weights must be 1-D and the same length")
        if idx.size == 0:
            raise ValueError("a sparse instance needs at least one feature")
        if idx[0] < 0 or np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be non-negative and strictly increasing")
        if not np.all(np.isfinite(w)):
            raise ValueError("feature weights must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dense(cls, values) -> "SparseInstance":
        values = np.asarray(values, dtype=np.float64)
        return cls(np.arange(values.size), values)

    def __eq__(self, other):
        if not isinstance(other, SparseInstance):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.weights, other.weights
        )

    def __len__(self):
        return int(self.indices.size)


@dataclass(eq=False)
class EmbedderParams:
    """Token table plus MLP layers. ``weights[l]`` has shape (fan_in, fan_out)."""

    token_table: np.ndarray
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatch("one bias per layer")
        width = self.token_table.shape[1]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[0] != width or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer shapes do not chain at width {width}")
            width = w.shape[1]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        vocab_size: int,
        embed_dim: int,
        hidden: Sequence[int],
        out_dim: int,
    ) -> "EmbedderParams":
        """He-uniform weights (bound sqrt(6 / fan_in)), zero biases, table U(-1, 1).

        The output is normalized, so gradients scale with 1/|raw output|;
        this keeps the raw output norm of order one at init.
        """
        table = rng.uniform(-1.0, 1.0, (vocab_size, embed_dim))
        weights, biases = [], []
        fan_in = embed_dim
        for fan_out in (*hidden, out_dim):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
            fan_in = fan_out
        return cls(table, weights, biases)

    @property
    def vocab_size(self) -> int:
        return self.token_table.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1] if self.weights else self.token_table.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = [self.token_table]
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "EmbedderParams":
        rest = list(arrays[1:])
        return cls(arrays[0], rest[0::2], rest[1::2])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "EmbedderParams":
        if len(vec) != sum(a.size for a in self.arrays()):
            raise ShapeMismatch("parameter vector has the wrong length")
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[pos : pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return self.from_arrays(out)

    def copy(self) -> "EmbedderParams":
        return self.from_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "EmbedderParams":
        return self.from_arrays([np.zeros_like(a) for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, EmbedderParams):
            return NotImplemented
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(np.array_equal(a, b) for a, b in zip(mine, theirs))


def init_class_embeddings(rng: np.random.Generator, num_classes: int, dim: int) -> np.ndarray:
    """Class embedding matrix with rows uniform on the unit sphere."""
    return random_unit_rows(rng, num_classes, dim)


def check_unit_rows(W: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(W, axis=1) - 1.0) <= tol))


def _mass(x: SparseInstance) -> float:
    m = float(np.sum(np.abs(x.weights)))
    if not m > 0:
        raise ZeroNorm("instance has all-zero feature weights")
    return m


def bag_matrix(instances: Sequence[SparseInstance], vocab_size: int) -> sp.csr_matrix:
    """Row i holds x_i's feature weights divided by their total magnitude."""
    if not instances:
        return sp.csr_matrix((0, vocab_size))
    indptr = np.zeros(len(instances) + 1, dtype=np.int64)
    np.cumsum([len(x) for x in instances], out=indptr[1:])
    indices = np.concatenate([x.indices for x in instances])
    if indices.size and (indices.max() >= vocab_size):
        raise VocabOutOfRange(f"feature id {int(indices.max())} outside vocab of {vocab_size}")
    data = np.concatenate([x.weights / _mass(x) for x in instances])
    return sp.csr_matrix((data, indices, indptr), shape=(len(instances), vocab_size))


@dataclass
class ForwardCache:
    bags: sp.csr_matrix
    activations: list[np.ndarray]  # input to each layer
    pre_relu: list[np.ndarray]
    raw: np.ndarray  # unnormalized output
    norms: np.ndarray
    out: np.ndarray


def forward(params: EmbedderParams, bags: sp.csr_matrix) -> ForwardCache:
    h = np.asarray(bags @ params.token_table)
    activations, pre = [], []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        activations.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    if not np.all(np.isfinite(norms)):
        raise NumericalFailure("embedder output is not finite")
    if not np.all(norms > NORM_TOL):
        raise ZeroNorm("embedder produced a (near) zero vector")
    return ForwardCache(bags, activations, pre, h, norms, h / norms)


def embed_batch(params: EmbedderParams, instances: Sequence[SparseInstance]) -> np.ndarray:
    return forward(params, bag_matrix(instances, params.vocab_size)).out


def embed(params: EmbedderParams, x: SparseInstance) -> np.ndarray:
    return embed_batch(params, [x])[0]


def score(W: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Logits ``W @ g``; accepts one embedding or a batch (rows)."""
    W = np.asarray(W, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if W.ndim != 2 or g.shape[-1] != W.shape[1]:
        raise DimensionMismatch(f"cannot score {g.shape} against W of shape {W.shape}")
    return g @ W.T


def backward_cache(params: EmbedderParams, cache: ForwardCache, upstream: np.ndarray) -> EmbedderParams:
    """Gradient of ``sum_i upstream_i . g_i`` with respect to every parameter."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.out.shape:
        raise ShapeMismatch(f"upstream {upstream.shape} vs output {cache.out.shape}")
    g = cache.out
    # d(v/|v|)/dv = (I - g g^T)/|v|
    delta = (upstream - np.sum(upstream * g, axis=1, keepdims=True) * g) / cache.norms
    grads_w, grads_b = [], []
    for i in reversed(range(len(params.weights))):
        if i < len(params.weights) - 1:
            delta = delta * (cache.pre_relu[i] > 0.0)
        grads_w.append(cache.activations[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        delta = delta @ params.weights[i].T
    grad_table = np.asarray(cache.bags.T @ delta)
    return EmbedderParams(grad_table, grads_w[::-1], grads_b[::-1])


def backward_batch(
    params: EmbedderParams, instances: Sequence[SparseInstance], upstream: np.ndarray
) -> EmbedderParams:
    cache = forward(params, bag_matrix(instances, params.vocab_size))
    return backward_cache(params, cache, upstream)


def backward(params: EmbedderParams, x: SparseInstance, upstream) -> EmbedderParams:
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (params.out_dim,):
        raise ShapeMismatch(f"upstream must have shape ({params.out_dim},)")
    return backward_batch(params, [x], upstream[None, :])


def finite_difference_gradient(
    loss_fn: Callable[[np.ndarray], float], point, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if not h > 0:
        raise ValueError("step h must be positive")
    p = np.array(point, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(p)
        flat[i] = orig - h
        down = loss_fn(p)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(p.shape)

import numpy as np
import pytest

from fedaws.errors import DimensionMismatch, ShapeMismatch, VocabOutOfRange, ZeroNorm
from fedaws.mathcore import normalize
from fedaws.model import (
    EmbedderParams,
    SparseInstance,
    backward,
    backward_batch,
    bag_matrix,
    embed,
    embed_batch,
    finite_difference_gradient,
    forward,
    score,
)

from gradutil import GRAD_RTOL, KINK_GUARD, POINTS, fd, rel_error


def _linear(table, out=None):
    table = np.asarray(table, dtype=np.float64)
    d = table.shape[1]
    w = np.eye(d) if out is None else out
    return EmbedderParams(table, [w], [np.zeros(w.shape[1])])


def _reference_embed(params, x):
    """Dense, one-instance-at-a-time forward pass."""
    bag = np.zeros(params.token_table.shape[1])
    for i, v in zip(x.indices, x.weights):
        bag += v * params.token_table[i]
    h = bag / np.sum(np.abs(x.weights))
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = np.array([sum(h[r] * w[r, c] for r in range(w.shape[0])) for c in range(w.shape[1])]) + b
        if layer < len(params.weights) - 1:
            h = np.where(h > 0, h, 0.0)
    return h / np.sqrt(np.sum(h * h))


def _random_instance(rng, vocab):
    k = int(rng.integers(1, vocab + 1))
    idx = np.sort(rng.choice(vocab, size=k, replace=False))
    return SparseInstance(idx, rng.standard_normal(k))


def test_single_token_identity_embedder():
    p = _linear([[3.0, 4.0]])
    np.testing.assert_allclose(embed(p, SparseInstance([0], [1.0])), [0.6, 0.8])


def test_two_tokens_average():
    r = np.array([[1.0, 2.0, -0.5], [0.3, -1.0, 2.0]])
    g = embed(_linear(r), SparseInstance([0, 1], [1.0, 1.0]))
    np.testing.assert_allclose(g, normalize((r[0] + r[1]) / 2), atol=1e-15)


def test_forward_matches_reference():
    rng = np.random.default_rng(3)
    for _ in range(10):
        vocab = int(rng.integers(3, 12))
        p = EmbedderParams.init(rng, vocab, 5, (7, 6), 4)
        p.biases = [rng.standard_normal(b.shape) * 0.1 for b in p.biases]
        xs = [_random_instance(rng, vocab) for _ in range(6)]
        G = embed_batch(p, xs)
        for g, x in zip(G, xs):
            np.testing.assert_allclose(g, _reference_embed(p, x), atol=1e-10)


def test_sparse_instance_validation():
    with pytest.raises(ValueError):
        SparseInstance([2, 1], [1.0, 1.0])
    with pytest.raises(ValueError):
        SparseInstance([], [])
    with pytest.raises(ShapeMismatch):
        SparseInstance([0, 1], [1.0])
    with pytest.raises(ValueError):
        SparseInstance([0], [np.nan])


def test_bagging_errors():
    with pytest.raises(VocabOutOfRange):
        bag_matrix([SparseInstance([5], [1.0])], 3)
    with pytest.raises(ZeroNorm):
        bag_matrix([SparseInstance([0], [0.0])], 3)


def test_zero_output_is_rejected():
    p = _linear([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ZeroNorm):
        embed(p, SparseInstance([0], [1.0]))


def test_score_examples():
    W = np.eye(4)
    np.testing.assert_array_equal(score(W, np.eye(4)[0]), [1, 0, 0, 0])
    rng = np.random.default_rng(0)
    W = rng.standard_normal((6, 3))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    assert score(W, W[2])[2] == pytest.approx(1.0, abs=1e-15)
    g = normalize(rng.standard_normal(3))
    s = score(W, g)
    for c in range(6):
        assert abs(s[c] - sum(W[c, j] * g[j] for j in range(3))) <= 1e-10
    with pytest.raises(DimensionMismatch):
        score(W, np.ones(4))


def test_params_vector_round_trip():
    p = EmbedderParams.init(np.random.default_rng(0), 5, 3, (4,), 2)
    assert p.with_vector(p.to_vector()) == p
    with pytest.raises(ShapeMismatch):
        p.with_vector(np.zeros(3))
    with pytest.raises(ShapeMismatch):
        EmbedderParams(np.zeros((5, 3)), [np.zeros((4, 2))], [np.zeros(2)])


def test_backward_zero_upstream():
    rng = np.random.default_rng(1)
    p = EmbedderParams.init(rng, 4, 3, (5,), 3)
    grads = backward(p, SparseInstance([0, 2], [1.0, 0.5]), np.zeros(3))
    assert all(not np.any(a) for a in grads.arrays())


def test_backward_upstream_shape():
    p = EmbedderParams.init(np.random.default_rng(1), 4, 3, (), 3)
    with pytest.raises(ShapeMismatch):
        backward(p, SparseInstance([0], [1.0]), np.zeros(2))


def test_backward_two_parameter_chain():
    # One token with row v = (a, b), identity output layer: g = v/|v|.
    # In polar form g = (cos t, sin t) and dL/dv = (u . e_t) e_t / |v|, e_t = (-sin t, cos t).
    a, b = 1.3, -0.7
    u = np.array([0.4, 2.0])
    p = _linear([[a, b]])
    grads = backward(p, SparseInstance([0], [1.0]), u)
    r, t = np.hypot(a, b), np.arctan2(b, a)
    e = np.array([-np.sin(t), np.cos(t)])
    np.testing.assert_allclose(grads.token_table[0], (u @ e) * e / r, atol=1e-14)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < POINTS:
        vocab = int(rng.integers(3, 8))
        p = EmbedderParams.init(rng, vocab, 4, (5, 4), 3)
        p.biases = [rng.standard_normal(b.shape) * 0.1 for b in p.biases]
        xs = [_random_instance(rng, vocab) for _ in range(3)]
        cache = forward(p, bag_matrix(xs, vocab))
        if min(np.abs(z).min() for z in cache.pre_relu[:-1]) < KINK_GUARD:
            continue
        U = rng.standard_normal((3, 3))
        analytic = backward_batch(p, xs, U).to_vector()

        def loss(vec):
            return float(np.sum(U * embed_batch(p.with_vector(vec), xs)))

        assert rel_error(analytic, fd(loss, p.to_vector())) <= GRAD_RTOL
        checked += 1


def test_finite_difference_examples():
    assert finite_difference_gradient(lambda p: float(p[0] ** 2), [3.0])[0] == pytest.approx(6.0, abs=1e-8)
    assert finite_difference_gradient(lambda p: float(5 * p[0]), [0.7])[0] == pytest.approx(5.0, abs=1e-9)
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda p: 0.0, [1.0], h=0.0)

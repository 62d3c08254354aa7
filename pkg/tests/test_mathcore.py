import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedaws.errors import DimensionMismatch, NotNormalized, ZeroNorm
from fedaws.mathcore import (
    chordal_distance,
    cosine_distance,
    dot,
    is_unit,
    make_rng,
    normalize,
    normalize_rows,
    random_unit_rows,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = st.integers(1, 16).flatmap(lambda n: arrays(np.float64, n, elements=finite))


def _unit_pair(seed, d):
    rng = np.random.default_rng(seed)
    return random_unit_rows(rng, 2, d)


def test_normalize_examples():
    np.testing.assert_allclose(normalize([3, 4]), [0.6, 0.8])
    np.testing.assert_array_equal(normalize([1, 0, 0]), [1, 0, 0])
    with pytest.raises(ZeroNorm):
        normalize([1e-20, 0])


@given(vectors)
def test_normalize_gives_unit_norm(v):
    if np.linalg.norm(v) <= 1e-12:
        with pytest.raises(ZeroNorm):
            normalize(v)
    else:
        assert is_unit(normalize(v), 1e-12)


def test_normalize_rows_rejects_zero_row():
    with pytest.raises(ZeroNorm):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_dot_examples():
    assert dot([1, 2], [3, 4]) == 11
    assert dot([0.3, -2.0], [0, 0]) == 0
    with pytest.raises(DimensionMismatch):
        dot([1, 2], [1, 2, 3])


def test_wide_dot_matches_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        u, v = rng.standard_normal((2, 512))
        total = 0.0
        for a, b in zip(u, v):
            total += a * b
        assert abs(dot(u, v) - total) <= 1e-10


def test_cosine_distance_examples():
    u = normalize([0.3, -0.4, 1.2])
    assert cosine_distance(u, u) == pytest.approx(0.0, abs=1e-15)
    assert cosine_distance([1, 0], [0, 1]) == 1.0
    assert cosine_distance([1, 0], [-1, 0]) == 2.0


def test_cosine_distance_preconditions():
    with pytest.raises(DimensionMismatch):
        cosine_distance([1, 0], [1, 0, 0])
    with pytest.raises(NotNormalized):
        cosine_distance([2, 0], [1, 0])


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64))
def test_cosine_distance_symmetric_and_bounded(seed, d):
    u, v = _unit_pair(seed, d)
    duv = cosine_distance(u, v)
    assert duv == cosine_distance(v, u)
    assert 0.0 <= duv <= 2.0


def test_cosine_distance_breaks_triangle_inequality():
    # 0, 60 and 120 degrees: 1.5 > 0.5 + 0.5
    a = np.array([1.0, 0.0])
    b = np.array([math.cos(math.pi / 3), math.sin(math.pi / 3)])
    c = np.array([math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)])
    assert cosine_distance(a, c) > cosine_distance(a, b) + cosine_distance(b, c) + 0.4
    assert chordal_distance(a, c) <= chordal_distance(a, b) + chordal_distance(b, c)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1), st.integers(2, 32))
def test_triangle_inequalities(seed, d):
    a, b, c = random_unit_rows(np.random.default_rng(seed), 3, d)
    slack = 1e-12
    assert chordal_distance(a, c) <= chordal_distance(a, b) + chordal_distance(b, c) + slack
    # cosine distance is half a squared metric, so only the relaxed form holds
    assert cosine_distance(a, c) <= 2 * (cosine_distance(a, b) + cosine_distance(b, c)) + slack


def test_make_rng_streams():
    a = make_rng(7, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, make_rng(7, 1, 2).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 1, 3).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, 1, 2).standard_normal(5))

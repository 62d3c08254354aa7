import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedaws.data import (
    LabeledDataset,
    SyntheticSpec,
    balanced,
    dump,
    gen_synthetic,
    missing_classes,
    parse_sparse_dataset,
    sample_around,
    shard_by_label,
)
from fedaws.errors import IndexOutOfRange, ParseError
from fedaws.model import SparseInstance


def _parse(text, **kw):
    return parse_sparse_dataset(io.StringIO(text), **kw)


def test_parse_single_line():
    data = _parse("3 0:1.0 7:0.5\n")
    assert len(data) == 1 and data.labels[0] == 3
    assert len(data.instances[0]) == 2
    assert data.num_classes == 4 and data.vocab_size == 8


def test_parse_sorts_features_and_reads_header():
    data = _parse("2 10 3\n1 4:2 1:0.5\n")
    np.testing.assert_array_equal(data.instances[0].indices, [1, 4])
    np.testing.assert_array_equal(data.instances[0].weights, [0.5, 2.0])
    assert data.num_classes == 3 and data.vocab_size == 10


def test_multi_label_choice_is_seeded():
    text = "1,4 2:1.0\n" * 30
    a = _parse(text, seed=5).labels
    assert set(a) <= {1, 4} and len(set(a)) == 2
    np.testing.assert_array_equal(a, _parse(text, seed=5).labels)
    assert not np.array_equal(a, _parse(text, seed=6).labels)


@pytest.mark.parametrize(
    "text, line",
    [
        ("abc 0:1.0\n", 1),
        ("0 1:1\n1 2:x\n", 2),
        ("0 1:1\n1\n", 2),
        ("0 1:1 1:2\n", 1),
        ("0 -1:1\n", 1),
        ("0 1-1\n", 1),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as err:
        _parse(text)
    assert err.value.line == line


def test_parse_out_of_range():
    with pytest.raises(IndexOutOfRange):
        _parse("0 5:1.0\n", vocab_size=5)
    with pytest.raises(IndexOutOfRange):
        _parse("2 0:1.0\n", num_classes=2)


weights = st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v != 0)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 8))
    instances, labels = [], []
    for _ in range(n):
        idx = sorted(draw(st.sets(st.integers(0, 50), min_size=1, max_size=6)))
        instances.append(SparseInstance(idx, [draw(weights) for _ in idx]))
        labels.append(draw(st.integers(0, 5)))
    return LabeledDataset(instances, labels, max(labels) + 1, max(int(x.indices[-1]) for x in instances) + 1)


@settings(max_examples=100)
@given(datasets())
def test_dump_parse_round_trip(data):
    buf = io.StringIO()
    dump(data, buf)
    again = _parse(buf.getvalue())
    assert again == data
    buf2 = io.StringIO()
    dump(again, buf2)
    assert buf2.getvalue() == buf.getvalue()


def test_synthetic_spec_parse():
    spec = SyntheticSpec.parse("C=10,d=32,n=50,sigma=0.05", seed=7)
    assert (spec.num_classes, spec.dim, spec.per_class, spec.sigma, spec.seed) == (10, 32, 50, 0.05, 7)
    assert SyntheticSpec.parse("C=2,d=3,n=4").sigma == 0.05
    for bad in ("C=10,d=32", "C=10,d=32,n=x", "C=10,d=32,n=5,q=1", "C=0,d=3,n=1", "C=2,d=2,n=2,sigma=-1"):
        with pytest.raises(ValueError):
            SyntheticSpec.parse(bad)


def test_synthetic_generation():
    data = gen_synthetic(SyntheticSpec(10, 32, 50, 0.05, seed=7))
    assert len(data) == 500 and data.num_classes == 10 and data.vocab_size == 32
    again = gen_synthetic(SyntheticSpec(10, 32, 50, 0.05, seed=7))
    assert again == data
    assert gen_synthetic(SyntheticSpec(10, 32, 50, 0.05, seed=8)) != data


def test_zero_noise_gives_prototypes():
    data = gen_synthetic(SyntheticSpec(4, 6, 3, 0.0, seed=1))
    for x, y in zip(data.instances, data.labels):
        np.testing.assert_array_equal(x.weights, data.prototypes[y])


def test_antipodal_prototypes_are_separable():
    rng = np.random.default_rng(0)
    p = np.array([[1.0, 0.0], [-1.0, 0.0]])
    points, labels = sample_around(p, 100, 0.01, rng)
    nearest = np.argmax(points @ p.T, axis=1)
    assert np.mean(nearest == labels) == 1.0


def test_shard_by_label():
    x = SparseInstance([0], [1.0])
    data = LabeledDataset([x, x, x], [0, 0, 1], 2, 1)
    shards = shard_by_label(data)
    assert [(s.class_id, len(s)) for s in shards] == [(0, 2), (1, 1)]
    assert not balanced(shards)
    assert shard_by_label(LabeledDataset([], [], 3, 1)) == []


def test_missing_classes_warn(caplog):
    x = SparseInstance([0], [1.0])
    data = LabeledDataset([x, x], [0, 2], 4, 1)
    assert missing_classes(data) == [1, 3]
    with caplog.at_level("WARNING"):
        assert [s.class_id for s in shard_by_label(data)] == [0, 2]
    assert "no instances" in caplog.text

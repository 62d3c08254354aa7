"""Synthetic data, sparse text ingestion and per-class sharding.

Text format, one example per line, 0-based feature ids::

    label[,label...] idx:val idx:val ...

A first line made of exactly three bare integers is read as the
``points features labels`` header used by extreme-classification dumps.
Multi-label lines are reduced to one label, drawn uniformly with the
load seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import IndexOutOfRange, ParseError
from .mathcore import make_rng, normalize_rows
from .model import SparseInstance

log = logging.getLogger(__name__)


@dataclass(eq=False)
class LabeledDataset:
    instances: list[SparseInstance]
    labels: np.ndarray
    num_classes: int
    vocab_size: int
    prototypes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.instances) != self.labels.size:
            raise ValueError("instances and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self):
        return len(self.instances)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.vocab_size == other.vocab_size
            and np.array_equal(self.labels, other.labels)
            and self.instances == other.instances
        )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    dim: int
    per_class: int
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.num_classes, self.dim, self.per_class) < 1 or self.sigma < 0:
            raise ValueError(f"invalid synthetic spec {self}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SyntheticSpec":
        """Parse ``C=10,d=32,n=50,sigma=0.05``; ``sigma`` (default 0.05) and ``seed`` are optional."""
        aliases = {"c": "num_classes", "d": "dim", "n": "per_class", "sigma": "sigma", "seed": "seed"}
        values: dict = {"seed": seed}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, val = part.partition("=")
            key = aliases.get(key.strip().lower())
            if not sep or key is None:
                raise ValueError(f"bad synthetic spec item {part!r}")
            try:
                values[key] = float(val) if key == "sigma" else int(val)
            except ValueError:
                raise ValueError(f"bad value in synthetic spec item {part!r}") from None
        missing = {"num_classes", "dim", "per_class"} - values.keys()
        if missing:
            raise ValueError(f"synthetic spec missing {sorted(missing)}")
        return cls(**values)


def sample_around(prototypes: np.ndarray, per_class: int, sigma: float, rng: np.random.Generator):
    C, d = prototypes.shape
    labels = np.repeat(np.arange(C), per_class)
    noise = rng.standard_normal((labels.size, d))
    if sigma == 0:
        # prototypes are already unit; renormalizing could move the last bit
        return prototypes[labels].copy(), labels
    return normalize_rows(prototypes[labels] + sigma * noise), labels


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    rng = make_rng(spec.seed, 0xDA7A)
    prototypes = normalize_rows(rng.standard_normal((spec.num_classes, spec.dim)))
    points, labels = sample_around(prototypes, spec.per_class, spec.sigma, rng)
    return LabeledDataset(
        [SparseInstance.dense(p) for p in points], labels, spec.num_classes, spec.dim, prototypes
    )


def _parse_feature(tok: str, lineno: int, vocab_size: int | None) -> tuple[int, float]:
    idx, sep, val = tok.partition(":")
    if not sep:
        raise ParseError(lineno, f"expected idx:val, got {tok!r}")
    try:
        i, v = int(idx), float(val)
    except ValueError:
        raise ParseError(lineno, f"bad feature {tok!r}") from None
    if i < 0 or (vocab_size is not None and i >= vocab_size):
        raise IndexOutOfRange(lineno, f"feature id {i} out of range")
    if not np.isfinite(v):
        raise ParseError(lineno, f"non-finite feature value {tok!r}")
    return i, v


def parse_sparse_dataset(
    stream: Iterable[str],
    seed: int = 0,
    num_classes: int | None = None,
    vocab_size: int | None = None,
) -> LabeledDataset:
    rng = make_rng(seed, 0x1ABE1)
    instances, labels = [], []
    max_label = max_idx = -1
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        toks = line.split()
        if lineno == 1 and len(toks) == 3 and all(t.isdigit() for t in toks):
            _, vocab_hdr, classes_hdr = map(int, toks)
            vocab_size = vocab_size or vocab_hdr
            num_classes = num_classes or classes_hdr
            continue
        try:
            choices = [int(t) for t in toks[0].split(",")]
        except ValueError:
            raise ParseError(lineno, f"bad label field {toks[0]!r}") from None
        if any(c < 0 for c in choices):
            raise ParseError(lineno, "negative label")
        label = choices[0] if len(choices) == 1 else choices[int(rng.integers(len(choices)))]
        if num_classes is not None and label >= num_classes:
            raise IndexOutOfRange(lineno, f"label {label} out of range")
        feats = [_parse_feature(t, lineno, vocab_size) for t in toks[1:]]
        if not feats:
            raise ParseError(lineno, "no features")
        feats.sort()
        idx = np.array([f[0] for f in feats], dtype=np.int64)
        if np.any(np.diff(idx) == 0):
            raise ParseError(lineno, "duplicate feature id")
        instances.append(SparseInstance(idx, np.array([f[1] for f in feats])))
        labels.append(label)
        max_label = max(max_label, label)
        max_idx = max(max_idx, int(idx[-1]))
    return LabeledDataset(
        instances,
        np.array(labels, dtype=np.int64),
        num_classes if num_classes is not None else max_label + 1,
        vocab_size if vocab_size is not None else max_idx + 1,
    )


def dump(data: LabeledDataset, out: IO[str]) -> None:
    """Write the canonical text form; floats use repr so re-parsing is exact."""
    for x, y in zip(data.instances, data.labels):
        feats = " ".join(f"{i}:{float(v)!r}" for i, v in zip(x.indices.tolist(), x.weights.tolist()))
        out.write(f"{int(y)} {feats}\n")


@dataclass(frozen=True, eq=False)
class ClientShard:
    class_id: int
    instances: tuple[SparseInstance, ...]

    def __len__(self):
        return len(self.instances)


def shard_by_label(data: LabeledDataset) -> list[ClientShard]:
    """One shard per class that has data, ordered by class id."""
    shards = []
    for c in range(data.num_classes):
        rows = np.flatnonzero(data.labels == c)
        if rows.size:
            shards.append(ClientShard(c, tuple(data.instances[i] for i in rows)))
    empty = missing_classes(data)
    if empty and len(data):
        log.warning("%d classes have no instances and get no client: %s", len(empty), empty[:20])
    return shards


def missing_classes(data: LabeledDataset) -> list[int]:
    counts = np.bincount(data.labels, minlength=data.num_classes)
    return [int(c) for c in np.flatnonzero(counts == 0)]


def balanced(shards: Sequence[ClientShard]) -> bool:
    return len({len(s) for s in shards}) <= 1

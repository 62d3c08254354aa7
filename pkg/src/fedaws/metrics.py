"""Evaluation metrics and the per-round metrics record.

Every function here takes instance embeddings ``G`` (n x d, unit rows), the
class matrix ``W`` (C x d, unit rows) and integer labels, so the same code
scores a live model, a frozen snapshot or a synthetic test case.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import RhoZero, SingleClass
from .losses import pos_hinge_loss
from .mathcore import chordal_distance, cosine_distance, pairwise_cosine_distance
from .spreadout import reg_sp

CSV_HEADER = ("round", "p1", "p3", "p5", "epsilon", "rho", "rpos", "reg", "prop1_pass", "prop1_vacuous")
PROP1_SLACK = 1e-12


def true_label_rank(S: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """0-based rank of the true class; ties go to the lower class id."""
    S = np.asarray(S, dtype=np.float64)
    rows = np.arange(S.shape[0])
    sy = S[rows, labels][:, None]
    ids = np.arange(S.shape[1])[None, :]
    ahead = (S > sy) | ((S == sy) & (ids < labels[:, None]))
    return ahead.sum(axis=1)


def precision_at_k(S: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose true label is among the top-k logits."""
    S = np.asarray(S)
    if not 1 <= k <= S.shape[1]:
        raise ValueError(f"k={k} outside [1, {S.shape[1]}]")
    if S.shape[0] == 0:
        return 0.0
    return float(np.mean(true_label_rank(S, np.asarray(labels)) < k))


def epsilon_rho(G: np.ndarray, W: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Mean instance-to-true-class cosine distance and minimum class-class distance."""
    G, W, labels = np.asarray(G), np.asarray(W), np.asarray(labels)
    if G.shape[0] == 0:
        raise ValueError("epsilon needs at least one instance")
    C = W.shape[0]
    if C < 2:
        raise SingleClass("rho is undefined for a single class")
    pos = np.clip(1.0 - np.sum(G * W[labels], axis=1), 0.0, 2.0)
    iu = np.triu_indices(C, 1)
    return float(pos.mean()), float(pairwise_cosine_distance(W, W)[iu].min())


@dataclass(frozen=True)
class Prop1Result:
    error_rate: float
    bound: float
    passed: bool
    vacuous: bool
    epsilon: float
    rho: float


def check_prop1(G: np.ndarray, W: np.ndarray, labels: np.ndarray, metric: str = "cosine") -> Prop1Result:
    """Misclassification rate against ``2 eps / rho``.

    An instance is counted as an error when some other class is at least as
    close as its own (ties are errors). ``metric`` is ``"cosine"`` or
    ``"chordal"``; the bound is only a theorem for the latter, which is a
    true metric on the sphere.
    """
    G, W, labels = np.asarray(G), np.asarray(W), np.asarray(labels)
    if W.shape[0] < 2:
        raise SingleClass("rho is undefined for a single class")
    D = pairwise_cosine_distance(G, W)
    Dw = pairwise_cosine_distance(W, W)
    if metric == "chordal":
        D, Dw = np.sqrt(2.0 * D), np.sqrt(2.0 * Dw)
    elif metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}")
    rows = np.arange(G.shape[0])
    dy = D[rows, labels]
    others = D.copy()
    others[rows, labels] = np.inf
    rate = float(np.mean(np.any(dy[:, None] >= others, axis=1)))
    eps = float(dy.mean())
    rho = float(Dw[np.triu_indices(W.shape[0], 1)].min())
    if rho <= 0.0:
        raise RhoZero("two class embeddings coincide")
    bound = 2.0 * eps / rho
    return Prop1Result(rate, bound, rate <= bound + PROP1_SLACK, bound >= 1.0, eps, rho)


def brute_epsilon_rho(G, W, labels, metric: str = "cosine") -> tuple[float, float]:
    """Loop-based reference used by tests and by the verification sweep."""
    dist = cosine_distance if metric == "cosine" else chordal_distance
    eps = math.fsum(dist(g, W[y]) for g, y in zip(G, labels)) / len(labels)
    rho = min(dist(W[i], W[j]) for i in range(len(W)) for j in range(i + 1, len(W)))
    return eps, rho


@dataclass
class MetricsRecord:
    round: int
    p1: float
    p3: float
    p5: float
    epsilon: float
    rho: float
    rpos: float
    reg: float
    prop1_pass: bool
    prop1_vacuous: bool

    def to_row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                out.append("1" if v else "0")
            elif isinstance(v, int):
                out.append(str(v))
            else:
                out.append(format(v, ".17g"))
        return out

    @classmethod
    def from_row(cls, row: Sequence[str]) -> "MetricsRecord":
        vals = dict(zip(CSV_HEADER, row))
        kwargs = {}
        for f in fields(cls):
            raw = vals[f.name]
            if f.name == "round":
                kwargs[f.name] = int(raw)
            elif f.name.startswith("prop1"):
                kwargs[f.name] = raw == "1"
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


def compute_record(
    round_index: int, G: np.ndarray, W: np.ndarray, labels: np.ndarray, nu: float, margin: float
) -> MetricsRecord:
    S = G @ W.T
    C = W.shape[0]
    p = [precision_at_k(S, labels, min(k, C)) for k in (1, 3, 5)]
    eps, rho = epsilon_rho(G, W, labels)
    rpos = float(np.mean(pos_hinge_loss(S[np.arange(len(labels)), labels], margin)[0]))
    try:
        res = check_prop1(G, W, labels)
        passed, vacuous = res.passed, res.vacuous
    except RhoZero:
        passed, vacuous = True, True
    return MetricsRecord(round_index, *p, eps, rho, rpos, reg_sp(W, nu), passed, vacuous)


def write_csv(records: Iterable[MetricsRecord], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.to_row())


def read_csv(stream: IO[str]) -> list[MetricsRecord]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected metrics header {header}")
    return [MetricsRecord.from_row(row) for row in reader if row]

"""Numerical checks of the bounds and identities behind FedAwS.

Checkers, by short name:

- ``prop1``: misclassification rate is at most ``2 eps / rho``.
- ``lemma2``: the cosine contrastive loss upper-bounds ``2 (nu - 1)`` times
  the top-1 error indicator.
- ``prop3``: with balanced shards and ``lambda = 1/C`` the server objective
  equals the mean of the per-instance loss ``lsp``.
- ``thm4``: ``|lsp - ccl| <= (1 + 2 nu) sum_{c != y} |w_c . (w_y - g)|``.
- ``claim5``: the squared hinge moves by at most ``(1 + 2 nu) |b|`` when its
  argument moves by ``b``.

Each ``check_*`` function evaluates one statement on concrete inputs. Each
``sweep_*`` function draws random inputs from a seeded stream and reports the
worst slack; a slack below ``-INEQ_TOL`` is a violation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import MarginOutOfTheoryRange, UnbalancedShards, ZeroNorm
from .losses import TIE_TOL, ccl_loss, ccl_loss_batch, lsp_loss, lsp_loss_batch
from .mathcore import make_rng, normalize_rows, random_unit_rows
from .metrics import check_prop1
from .model import EmbedderParams, SparseInstance, embed_batch
from .spreadout import reg_sp

INEQ_TOL = 1e-12
EQ_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    trials: int
    violations: int
    worst_slack: float
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = "".join(f" {k}={v}" for k, v in self.detail.items())
        return (
            f"{status} {self.name}: trials={self.trials} violations={self.violations} "
            f"worst_slack={self.worst_slack:.3e} time={self.seconds:.2f}s{extra}"
        )


def _check_nu(nu: float) -> None:
    if not 1.0 < nu < 2.0:
        raise MarginOutOfTheoryRange(f"nu={nu} outside (1, 2)")


def _draw_nu(rng, n, nu):
    if nu is None:
        # open interval: uniform() includes its lower end
        return 1.0 + (1.0 - rng.uniform(0.0, 1.0, n))
    _check_nu(nu)
    return np.full(n, float(nu))


# ---------------------------------------------------------------- lemma2: surrogate bound


def lemma2_slack(S: np.ndarray, y: np.ndarray, nu) -> np.ndarray:
    """``ccl - 2 (nu - 1) [y not in Top1]`` per row; ties count as correct."""
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (S.shape[0],))
    lhs = ccl_loss_batch(S, y, nu)
    sy = S[np.arange(S.shape[0]), y]
    wrong = sy < S.max(axis=1) - TIE_TOL
    return lhs - 2.0 * (nu - 1.0) * wrong


def _lemma2_batch(rng, n, C, nu):
    S = rng.uniform(-1.0, 1.0, (n, C))
    y = rng.integers(0, C, n)
    rows = np.arange(n)
    kind = rng.integers(0, 5, n)
    # 1: y is the argmax; 2: y tied with another class at the max;
    # 3: all logits equal; 4: y just below the max (wrong by a hair)
    m = S.max(axis=1)
    S[kind == 1, y[kind == 1]] = m[kind == 1] + 1e-3
    tied = rows[kind == 2]
    other = (y[tied] + 1 + rng.integers(0, C - 1, tied.size)) % C
    S[tied, y[tied]] = S[tied, other] = m[tied]
    S[kind == 3] = rng.uniform(-1.0, 1.0, (int(np.sum(kind == 3)), 1))
    hair = rows[kind == 4]
    S[hair, y[hair]] = m[hair] - 1e-9
    np.clip(S, -1.0, 1.0, out=S)
    return S, y, _draw_nu(rng, n, nu), kind


def sweep_lemma2(trials: int = 100_000, seed: int = 0, nu: float | None = None) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed, 2)
    worst, bad, done, wrong_cases = math.inf, 0, 0, 0
    sizes = (2, 3, 5, 10, 20)
    per = -(-trials // len(sizes))
    for C in sizes:
        n = min(per, trials - done)
        if n <= 0:
            break
        S, y, nus, _ = _lemma2_batch(rng, n, C, nu)
        slack = lemma2_slack(S, y, nus)
        wrong_cases += int(np.sum(S[np.arange(n), y] < S.max(axis=1) - TIE_TOL))
        worst = min(worst, float(slack.min()))
        bad += int(np.sum(slack < -INEQ_TOL))
        done += n
    return CheckResult("lemma2", done, bad, worst, time.perf_counter() - t0, {"misclassified": wrong_cases})


# ---------------------------------------------------------------- prop1: error rate vs 2 eps / rho


def _prop1_draw(rng, draw_index):
    C = int(rng.integers(2, 9))
    d = int(rng.integers(2, 17))
    n = int(rng.integers(C, 8 * C))
    labels = np.concatenate([np.arange(C), rng.integers(0, C, n - C)])
    if draw_index % 2 == 0:
        # random embedder on random dense data, class rows on the sphere
        vocab = int(rng.integers(2, 12))
        while True:
            params = EmbedderParams.init(rng, vocab, int(rng.integers(2, 9)), (int(rng.integers(4, 9)),), d)
            X = [SparseInstance.dense(rng.standard_normal(vocab)) for _ in range(n)]
            try:
                G = embed_batch(params, X)
                break
            except ZeroNorm:  # a dead ReLU layer; redraw
                continue
        W = random_unit_rows(rng, C, d)
    else:
        # "trained" geometry: instances scattered around their class rows
        W = random_unit_rows(rng, C, d)
        sigma = 10.0 ** rng.uniform(-3.0, 0.2)
        G = normalize_rows(W[labels] + sigma * rng.standard_normal((n, d)))
    return G, W, labels


def sweep_prop1(draws: int = 500, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed, 1)
    worst = math.inf
    bad = {"cosine": 0, "chordal": 0}
    vacuous = 0
    for i in range(draws):
        G, W, labels = _prop1_draw(rng, i)
        for metric in bad:
            res = check_prop1(G, W, labels, metric)
            worst = min(worst, res.bound - res.error_rate)
            bad[metric] += int(not res.passed)
            vacuous += int(metric == "cosine" and res.vacuous)
    return CheckResult(
        "prop1",
        draws,
        bad["cosine"] + bad["chordal"],
        worst,
        time.perf_counter() - t0,
        {"cosine_violations": bad["cosine"], "chordal_violations": bad["chordal"], "vacuous": vacuous},
    )


# ---------------------------------------------------------------- prop3: server objective identity


def check_prop3(G: np.ndarray, W: np.ndarray, labels: np.ndarray, nu: float) -> tuple[float, float, float]:
    """Server objective with lambda = 1/C versus the mean of the per-instance loss.

    The left side is built from per-client positive risks plus the
    regularizer; the right side from :func:`lsp_loss` one instance at a time.
    """
    labels = np.asarray(labels)
    C = W.shape[0]
    counts = np.bincount(labels, minlength=C)
    if counts.min() != counts.max() or counts[0] == 0:
        raise UnbalancedShards(f"class counts differ: {counts.tolist()}")
    n = labels.size
    S = G @ W.T
    lhs = 0.0
    for c in range(C):
        s_c = S[labels == c, c]
        lhs += (counts[c] / n) * float(np.mean((1.0 - s_c) ** 2))
    lhs += reg_sp(W, nu) / C
    rhs = math.fsum(lsp_loss(S[i, labels[i]], W, labels[i], nu) for i in range(n)) / n
    return lhs, rhs, abs(lhs - rhs)


def sweep_prop3(trials: int = 200, seed: int = 0, nu: float | None = None) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed, 3)
    bad, max_gap = 0, 0.0
    for i in range(trials):
        C = int(rng.integers(2, 7))
        per = int(rng.integers(1, 6))
        d = int(rng.integers(2, 9))
        labels = np.repeat(np.arange(C), per)
        W = random_unit_rows(rng, C, d)
        if i % 10 == 0:
            W = np.repeat(W[:1], C, axis=0)  # collapsed classes
        G = normalize_rows(W[labels] + rng.uniform(0.0, 2.0) * rng.standard_normal((labels.size, d)))
        this_nu = float(_draw_nu(rng, 1, nu)[0])
        _, _, gap = check_prop3(G, W, labels, this_nu)
        max_gap = max(max_gap, gap)
        bad += int(gap > EQ_TOL)
    return CheckResult("prop3", trials, bad, EQ_TOL - max_gap, time.perf_counter() - t0, {"max_gap": f"{max_gap:.3e}"})


# ---------------------------------------------------------------- thm4: lsp vs ccl approximation


def thm4_slack(G: np.ndarray, W: np.ndarray, labels: np.ndarray, nu) -> np.ndarray:
    """Per instance: ``(1 + 2 nu) sum_{c != y} |w_c . r| - |lsp - ccl|`` with ``r = w_y - g``."""
    labels = np.asarray(labels)
    n = G.shape[0]
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (n,))
    S = G @ W.T
    gap = np.abs(lsp_loss_batch(S, W, labels, nu) - ccl_loss_batch(S, labels, nu))
    proj = np.abs((W[labels] - G) @ W.T)
    proj[np.arange(n), labels] = 0.0
    return (1.0 + 2.0 * nu) * proj.sum(axis=1) - gap


def check_thm4(G: np.ndarray, W: np.ndarray, labels: np.ndarray, nu: float) -> float:
    """Worst violation of the two-sided bound (<= 0 means it holds everywhere)."""
    _check_nu(nu)
    return float(-thm4_slack(G, W, labels, nu).min())


def sweep_thm4(draws: int = 10_000, seed: int = 0, nu: float | None = None) -> CheckResult:
    t0 = time.perf_counter()
    rng = make_rng(seed, 4)
    worst, bad, done = math.inf, 0, 0
    batch = 500
    while done < draws:
        n = min(batch, draws - done)
        C = int(rng.integers(2, 11))
        d = int(rng.integers(2, 17))
        W = random_unit_rows(rng, C, d)
        labels = rng.integers(0, C, n)
        spread = rng.uniform(0.0, 3.0, (n, 1))
        G = normalize_rows(W[labels] + spread * rng.standard_normal((n, d)))
        exact = rng.uniform(size=n) < 0.05
        G[exact] = W[labels[exact]]
        slack = thm4_slack(G, W, labels, _draw_nu(rng, n, nu))
        worst = min(worst, float(slack.min()))
        bad += int(np.sum(slack < -INEQ_TOL))
        done += n
    return CheckResult("thm4", done, bad, worst, time.perf_counter() - t0)


# ---------------------------------------------------------------- claim5: squared hinge increment


def claim5_case(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sign case 1..4 of (a, a + b); 0 where either is exactly zero."""
    s = a + b
    case = np.zeros(a.shape, dtype=np.int64)
    case[(s < 0) & (a < 0)] = 1
    case[(s > 0) & (a > 0)] = 2
    case[(s > 0) & (a < 0)] = 3
    case[(s < 0) & (a > 0)] = 4
    return case


def claim5_slack(a, b, nu) -> np.ndarray:
    delta = np.square(np.maximum(0.0, a + b)) - np.square(np.maximum(0.0, a))
    return (1.0 + 2.0 * nu) * np.abs(b) - np.abs(delta)


def sweep_claim5(trials: int = 100_000, seed: int = 0, nu: float | None = None) -> CheckResult:
    """Stratified over the four sign cases, ``trials // 4`` draws each.

    ``a = nu - 1 + s_c`` and ``b = w_c . r = w_c.w_y - s_c`` with ``s_c`` and
    ``w_c.w_y`` both in [-1, 1], which is the range unit vectors allow.
    """
    t0 = time.perf_counter()
    rng = make_rng(seed, 5)
    quota = trials // 4
    kept: dict[int, list] = {c: [] for c in (1, 2, 3, 4)}
    have = dict.fromkeys(kept, 0)
    while min(have.values()) < quota:
        n = 4 * quota
        nus = _draw_nu(rng, n, nu)
        s_c = rng.uniform(-1.0, 1.0, n)
        t = rng.uniform(-1.0, 1.0, n)
        a, b = nus - 1.0 + s_c, t - s_c
        case = claim5_case(a, b)
        for c in kept:
            need = quota - have[c]
            if need > 0:
                idx = np.flatnonzero(case == c)[:need]
                kept[c].append((a[idx], b[idx], nus[idx]))
                have[c] += idx.size
    worst_by_case, bad = {}, 0
    for c, parts in kept.items():
        a = np.concatenate([p[0] for p in parts])
        b = np.concatenate([p[1] for p in parts])
        nus = np.concatenate([p[2] for p in parts])
        slack = claim5_slack(a, b, nus)
        worst_by_case[c] = float(slack.min())
        bad += int(np.sum(slack < -INEQ_TOL))
    detail = {f"case{c}": f"{have[c]}/{worst_by_case[c]:.3e}" for c in kept}
    return CheckResult("claim5", 4 * quota, bad, min(worst_by_case.values()), time.perf_counter() - t0, detail)


# ---------------------------------------------------------------- all together


SWEEPS: dict[str, Callable[..., CheckResult]] = {
    "lemma2": sweep_lemma2,
    "thm4": sweep_thm4,
    "claim5": sweep_claim5,
    "prop1": sweep_prop1,
    "prop3": sweep_prop3,
}

DEFAULT_TRIALS = {"lemma2": 100_000, "thm4": 10_000, "claim5": 100_000, "prop1": 500, "prop3": 200}


def run_all(seed: int = 0, trials: int | None = None, nu: float | None = None) -> list[CheckResult]:
    """Run every sweep. ``trials`` overrides the count of the sampled sweeps
    (lemma2, thm4, claim5); prop1 and prop3 keep their defaults.
    """
    if nu is not None:
        _check_nu(nu)
    results = []
    for name, fn in SWEEPS.items():
        n = DEFAULT_TRIALS[name] if trials is None or name in ("prop1", "prop3") else trials
        if name == "prop1":
            results.append(fn(n, seed))
        else:
            results.append(fn(n, seed, nu))
    return results


def ccl_reference(s, y, nu) -> float:
    """Scalar ccl used by tests to cross-check the batched form."""
    return ccl_loss(s, y, nu)

"""Federated training with positive-only clients.

Each round the server hands every participating client the shared embedder
parameters and *only that client's* class embedding. Clients run a few SGD
steps on the positive squared hinge, the server averages the embedders,
writes the returned class rows into W, and (in FedAwS mode) takes one
spreadout gradient step on W before renormalizing its rows.

Reductions always run in client order (sorted by class id, then shard
index), so results do not depend on how many worker threads ran clients.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import metrics as M
from .data import ClientShard, LabeledDataset
from .errors import CountOutOfRange, DuplicateClient, EmptyShard, NumericalFailure, UnknownClass
from .losses import DEFAULT_HINGE_MARGIN, DEFAULT_NU, pos_hinge_loss, softmax_xent_batch
from .mathcore import make_rng, normalize, normalize_rows
from .model import (
    EmbedderParams,
    backward_cache,
    bag_matrix,
    forward,
    init_class_embeddings,
)
from .spreadout import DEFAULT_CANDIDATE_CAP, candidate_classes, grad_reg_sp, grad_reg_sp_top

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    FEDAWS = "fedaws"
    BASELINE1 = "baseline1"  # positive loss only, clients update their class rows
    BASELINE2 = "baseline2"  # positive loss only, class rows frozen at init
    ORACLE_SOFTMAX = "softmax"  # centralized softmax training on pooled data


@dataclass(frozen=True)
class RoundPlan:
    mode: Mode = Mode.FEDAWS
    lr: float = 0.1
    token_lr: float | None = None
    optimizer: str = "sgd"
    local_steps: int = 1
    spreadout_mult: float = 10.0
    k: int = 10
    nu: float = DEFAULT_NU
    margin: float = DEFAULT_HINGE_MARGIN
    regularizer: str = "top"
    mined_distance: str = "euclidean"
    clients_per_round: int | None = None
    candidate_cap: int = DEFAULT_CANDIDATE_CAP
    temperature: float = 0.1
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.lr > 0 or (self.token_lr is not None and not self.token_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.spreadout_mult < 0:
            raise ValueError("spreadout multiplier must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.nu < 2:
            raise ValueError("nu must lie in (0, 2)")
        if self.regularizer not in ("top", "full"):
            raise ValueError("regularizer must be 'top' or 'full'")
        if self.mined_distance not in ("euclidean", "cosine"):
            raise ValueError("mined_distance must be 'euclidean' or 'cosine'")
        if self.optimizer not in ("sgd", "adagrad"):
            raise ValueError("optimizer must be 'sgd' or 'adagrad'")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(eq=False)
class ServerState:
    params: EmbedderParams
    W: np.ndarray
    round: int = 0


@dataclass(eq=False)
class ClientUpdate:
    params: EmbedderParams
    class_embedding: np.ndarray
    class_id: int
    sample_count: int
    client_id: int = 0


def init_state(
    seed: int,
    vocab_size: int,
    num_classes: int,
    embed_dim: int = 32,
    hidden: Sequence[int] = (64, 64),
    out_dim: int = 32,
) -> ServerState:
    params = EmbedderParams.init(make_rng(seed, 1), vocab_size, embed_dim, hidden, out_dim)
    W = init_class_embeddings(make_rng(seed, 2), num_classes, out_dim)
    return ServerState(params, W, 0)


def _apply(params, grads, lr, token_lr, accum=None):
    """In-place step: SGD on the token table, SGD or Adagrad elsewhere."""
    arrays, garrays = params.arrays(), grads.arrays()
    arrays[0] -= token_lr * garrays[0]
    for i, (a, g) in enumerate(zip(arrays[1:], garrays[1:]), start=1):
        if accum is None:
            a -= lr * g
        else:
            accum[i] += g * g
            a -= lr * g / (np.sqrt(accum[i]) + 1e-10)


def client_update(
    params: EmbedderParams,
    w_i: np.ndarray,
    shard: ClientShard,
    lr: float,
    steps: int = 1,
    margin: float = DEFAULT_HINGE_MARGIN,
    update_class_embedding: bool = True,
    token_lr: float | None = None,
    optimizer: str = "sgd",
    client_id: int = 0,
) -> ClientUpdate:
    """Local SGD on the mean positive squared hinge of one shard.

    The client sees the shared embedder, its own class row and its own data,
    nothing else.
    """
    n = len(shard)
    if n == 0:
        raise EmptyShard(f"client for class {shard.class_id} has no data")
    theta = params.copy()
    w = np.array(w_i, dtype=np.float64)
    bags = bag_matrix(shard.instances, theta.vocab_size)
    accum = [np.zeros_like(a) for a in theta.arrays()] if optimizer == "adagrad" else None
    for _ in range(steps):
        cache = forward(theta, bags)
        _, dloss = pos_hinge_loss(cache.out @ w, margin)
        dloss = np.atleast_1d(dloss) / n
        grad_theta = backward_cache(theta, cache, dloss[:, None] * w[None, :])
        grad_w = dloss @ cache.out
        _apply(theta, grad_theta, lr, lr if token_lr is None else token_lr, accum)
        if update_class_embedding and np.any(grad_w):
            w = normalize(w - lr * grad_w)
    return ClientUpdate(theta, w, shard.class_id, n, client_id)


def aggregation_weights(updates: Sequence[ClientUpdate]) -> np.ndarray:
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    return counts / counts.sum()


def _weighted_average(arrays: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    # Expressed relative to the first entry so identical inputs come back unchanged.
    ref = arrays[0]
    out = ref.copy()
    for a, w in zip(arrays[1:], weights[1:]):
        out += w * (a - ref)
    return out


def aggregate(
    updates: Sequence[ClientUpdate], prev: ServerState, weights: np.ndarray | None = None
) -> tuple[EmbedderParams, np.ndarray]:
    """Average embedder parameters; write each returned class row into W."""
    if not updates:
        return prev.params.copy(), prev.W.copy()
    C = prev.W.shape[0]
    seen = set()
    for u in updates:
        if not 0 <= u.class_id < C:
            raise UnknownClass(f"update for class {u.class_id} but W has {C} rows")
        key = (u.class_id, u.client_id)
        if key in seen:
            raise DuplicateClient(f"two updates from client {key}")
        seen.add(key)
    order = sorted(range(len(updates)), key=lambda i: (updates[i].class_id, updates[i].client_id))
    updates = [updates[i] for i in order]
    weights = aggregation_weights(updates) if weights is None else np.asarray(weights, dtype=np.float64)[order]
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, rtol=0, atol=1e-12):
        raise ValueError("aggregation weights must be non-negative and sum to 1")
    per_array = zip(*(u.params.arrays() for u in updates))
    params = EmbedderParams.from_arrays([_weighted_average(arrs, weights) for arrs in per_array])

    W = prev.W.copy()
    by_class: dict[int, list[int]] = {}
    for i, u in enumerate(updates):
        by_class.setdefault(u.class_id, []).append(i)
    for c, idx in by_class.items():
        if len(idx) == 1:
            W[c] = updates[idx[0]].class_embedding
        else:
            wts = weights[idx] / weights[idx].sum()
            W[c] = normalize(_weighted_average([updates[i].class_embedding for i in idx], wts))
    return params, W


def server_spreadout_step(
    W_tilde: np.ndarray,
    plan: RoundPlan,
    active: Sequence[int],
    candidates: Sequence[int] | None = None,
) -> np.ndarray:
    lam_lr = plan.spreadout_mult * plan.lr
    if plan.regularizer == "full":
        grad = grad_reg_sp(W_tilde, plan.nu)
    else:
        k = effective_k(plan.k, W_tilde.shape[0], candidates)
        grad = grad_reg_sp_top(W_tilde, active, candidates, k, plan.mined_distance)
    step = lam_lr * grad
    # Rows the step does not move are already unit; leave them bit-identical.
    moved = np.any(step != 0.0, axis=1)
    W = W_tilde.copy()
    W[moved] = normalize_rows(W_tilde[moved] - step[moved])
    return W


def effective_k(k: int, num_classes: int, candidates=None) -> int:
    pool = num_classes if candidates is None else len(candidates)
    return max(1, min(k, pool - 1))


def sample_clients(seed: int, round_index: int, class_ids: Sequence[int], count: int | None) -> np.ndarray:
    """Uniform sample without replacement, reproducible per (seed, round)."""
    class_ids = np.asarray(sorted(class_ids), dtype=np.int64)
    if count is None or count == class_ids.size:
        if class_ids.size == 0:
            raise CountOutOfRange("no classes to sample from")
        return class_ids
    if not 1 <= count <= class_ids.size:
        raise CountOutOfRange(f"count={count} outside [1, {class_ids.size}]")
    rng = make_rng(seed, 0xC11E, round_index)
    return np.sort(rng.choice(class_ids, size=count, replace=False))


def _check_finite(state: ServerState) -> None:
    if not (state.params.is_finite() and np.all(np.isfinite(state.W))):
        raise NumericalFailure(f"non-finite parameters after round {state.round}")


def _oracle_round(state: ServerState, plan: RoundPlan, bags, labels) -> ServerState:
    theta, W = state.params.copy(), state.W.copy()
    n = labels.size
    for _ in range(plan.local_steps):
        cache = forward(theta, bags)
        _, dS = softmax_xent_batch(cache.out @ W.T, labels, plan.temperature)
        dS /= n
        grad_W = dS.T @ cache.out
        grads = backward_cache(theta, cache, dS @ W)
        _apply(theta, grads, plan.lr, plan.token_lr or plan.lr)
        W = normalize_rows(W - plan.lr * grad_W)
    return ServerState(theta, W, state.round + 1)


def federated_round(
    state: ServerState,
    plan: RoundPlan,
    shards: Sequence[ClientShard],
    active: Sequence[int],
    candidates: Sequence[int] | None = None,
    pool: ThreadPoolExecutor | None = None,
    client_fn: Callable[..., ClientUpdate] = client_update,
) -> ServerState:
    active_set = set(int(c) for c in active)
    chosen = [(i, s) for i, s in enumerate(shards) if s.class_id in active_set]
    update_rows = plan.mode is not Mode.BASELINE2

    def run(item):
        i, shard = item
        return client_fn(
            state.params,
            state.W[shard.class_id].copy(),
            shard,
            plan.lr,
            plan.local_steps,
            plan.margin,
            update_class_embedding=update_rows,
            token_lr=plan.token_lr,
            optimizer=plan.optimizer,
            client_id=i,
        )

    updates = list(pool.map(run, chosen)) if pool is not None else [run(c) for c in chosen]
    params, W = aggregate(updates, state)
    if plan.mode is Mode.FEDAWS:
        W = server_spreadout_step(W, plan, sorted(active_set), candidates)
    return ServerState(params, W, state.round + 1)


def run_training(
    plan: RoundPlan,
    shards: Sequence[ClientShard],
    rounds: int,
    state: ServerState,
    seed: int = 0,
    eval_data: LabeledDataset | None = None,
    on_round: Callable[[ServerState, M.MetricsRecord], None] | None = None,
    client_fn: Callable[..., ClientUpdate] = client_update,
) -> tuple[ServerState, list[M.MetricsRecord]]:
    """Run ``rounds`` rounds and return the final state plus one record per round.

    Metrics are computed on ``eval_data`` (default: the pooled shards).
    """
    if eval_data is None:
        instances = [x for s in shards for x in s.instances]
        labels = np.array([s.class_id for s in shards for _ in s.instances], dtype=np.int64)
    else:
        instances, labels = eval_data.instances, eval_data.labels
    eval_bags = bag_matrix(instances, state.params.vocab_size)
    train_bags = train_labels = None
    if plan.mode is Mode.ORACLE_SOFTMAX:
        train_bags = bag_matrix([x for s in shards for x in s.instances], state.params.vocab_size)
        train_labels = np.array([s.class_id for s in shards for _ in s.instances], dtype=np.int64)

    C = state.W.shape[0]
    class_ids = sorted({s.class_id for s in shards})
    records: list[M.MetricsRecord] = []
    pool = ThreadPoolExecutor(plan.jobs) if plan.jobs > 1 else None
    try:
        for t in range(rounds):
            if plan.mode is Mode.ORACLE_SOFTMAX:
                state = _oracle_round(state, plan, train_bags, train_labels)
            else:
                active = sample_clients(seed, t, class_ids, plan.clients_per_round)
                cand = candidate_classes(C, seed, t, plan.candidate_cap)
                state = federated_round(state, plan, shards, active, cand, pool, client_fn)
            _check_finite(state)
            G = forward(state.params, eval_bags).out
            rec = M.compute_record(state.round, G, state.W, labels, plan.nu, plan.margin)
            records.append(rec)
            if on_round is not None:
                on_round(state, rec)
    finally:
        if pool is not None:
            pool.shutdown()
    return state, records


def evaluate(state: ServerState, data: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    """Instance embeddings and logits of ``data`` under ``state``."""
    G = forward(state.params, bag_matrix(data.instances, state.params.vocab_size)).out
    return G, G @ state.W.T


def precision_at_k(state: ServerState, data: LabeledDataset, k: int) -> float:
    return M.precision_at_k(evaluate(state, data)[1], data.labels, k)


def epsilon_rho(state: ServerState, data: LabeledDataset) -> tuple[float, float]:
    return M.epsilon_rho(evaluate(state, data)[0], state.W, data.labels)


def with_mode(plan: RoundPlan, mode: Mode | str, **changes) -> RoundPlan:
    return replace(plan, mode=Mode(mode), **changes)

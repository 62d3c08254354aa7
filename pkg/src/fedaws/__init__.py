"""Federated averaging with spreadout for clients that only see positive labels."""

from .data import ClientShard, LabeledDataset, SyntheticSpec, gen_synthetic, parse_sparse_dataset, shard_by_label
from .federation import ClientUpdate, Mode, RoundPlan, ServerState, init_state, run_training
from .model import EmbedderParams, SparseInstance

__version__ = "0.1.0"

__all__ = [
    "ClientShard",
    "ClientUpdate",
    "EmbedderParams",
    "LabeledDataset",
    "Mode",
    "RoundPlan",
    "ServerState",
    "SparseInstance",
    "SyntheticSpec",
    "gen_synthetic",
    "init_state",
    "parse_sparse_dataset",
    "run_training",
    "shard_by_label",
]

"""Kidney exchange on typed digraphs: generation, exact and greedy solvers, a learned edge scorer."""

__version__ = "0.1.0"

from .core import (
    ContractError,
    Instance,
    NodeType,
    ValidityReport,
    compute_flow,
    decompose,
    load_instance,
    save_instance,
    score,
    validate,
)
from .exact import ExactResult, brute_force, solve_exact
from .gen import GenConfig, generate, generate_dataset, wl_hash
from .greedy import greedy_cycles, greedy_paths
from .scorer import EdgeScores, ScorerConfig, ScorerParams, backward, forward, score_edges
from .train import TrainConfig, TrainHistory, kep_loss, train

__all__ = [
    "ContractError", "Instance", "NodeType", "ValidityReport", "compute_flow", "decompose",
    "load_instance", "save_instance", "score", "validate", "ExactResult", "brute_force",
    "solve_exact", "GenConfig", "generate", "generate_dataset", "wl_hash", "greedy_cycles",
    "greedy_paths", "EdgeScores", "ScorerConfig", "ScorerParams", "backward", "forward",
    "score_edges", "TrainConfig", "TrainHistory", "kep_loss", "train",
]

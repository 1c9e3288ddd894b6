"""Stochastic belief propagation for pairwise Markov random fields."""

from .bp import bp_fixed_point, bp_sweep, compute_marginals
from .model import PairwiseMRF, PottsParams, build_topology, generate_potts_mrf, potts_mrf
from .sbp import Harmonic, TheoremTwoB, TheoremTwoC, run_sbp, sbp_sweep

__version__ = "0.1.0"

__all__ = [
    "PairwiseMRF",
    "PottsParams",
    "build_topology",
    "generate_potts_mrf",
    "potts_mrf",
    "bp_sweep",
    "bp_fixed_point",
    "compute_marginals",
    "sbp_sweep",
    "run_sbp",
    "Harmonic",
    "TheoremTwoB",
    "TheoremTwoC",
]

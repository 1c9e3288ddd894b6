"""Arithmetic and communication accounting for message updates.

One multiply or add counts as one operation; a normalising division pass
over a length-d vector counts as d operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CostCounters:
    arithmetic_ops: int = 0
    bits_transmitted: int = 0
    edge_updates: int = 0

    def copy(self) -> "CostCounters":
        return CostCounters(self.arithmetic_ops, self.bits_transmitted, self.edge_updates)


def bits_per_update(d: int) -> int:
    """ceil(log2 d): bits needed to name one of d columns."""
    return (int(d) - 1).bit_length()


def product_ops(in_degree: np.ndarray, d: int) -> np.ndarray:
    """Ops to form the incoming product from ``in_degree`` messages.

    k messages need k - 1 elementwise multiplies; when k >= 2 the product is
    also rescaled by its max entry (one more pass of d).
    """
    k = np.asarray(in_degree, dtype=np.int64)
    mults = np.maximum(k - 1, 0) * d
    rescale = np.where(k >= 2, d, 0)
    return mults + rescale


def sbp_edge_ops(in_degree: np.ndarray, d: int, sampled: np.ndarray) -> np.ndarray:
    """Per-edge SBP cost: product, 3d for the mass function, the inverse-CDF
    scan up to and including the sampled index, and 3d + 3 for the damped
    update."""
    return product_ops(in_degree, d) + 3 * d + (np.asarray(sampled, dtype=np.int64) + 1) + 3 * d + 3


def bp_edge_ops(in_degree: np.ndarray, d: int) -> np.ndarray:
    """Per-edge BP cost: product, d to weight by the node potential, the
    d x d matrix-vector product (d^2 multiplies, d(d-1) adds) and 2d to
    normalise."""
    return product_ops(in_degree, d) + d + d * d + d * (d - 1) + 2 * d

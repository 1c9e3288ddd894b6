"""Synchronous sum-product message passing and an enumeration oracle.

A message set is an array of shape ``(2|E|, d)``; row ``e`` is the message on
directed edge ``e`` of the topology numbering.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .counters import CostCounters, bp_edge_ops
from .model import GraphTopology, MRFError, PairwiseMRF

# above this many oriented tables, gather per-edge tables instead of grouping
_GROUP_LIMIT = 64


def uniform_messages(topology: GraphTopology, d: int) -> np.ndarray:
    return np.full((topology.num_directed, d), 1.0 / d)


def random_messages(topology: GraphTopology, d: int, rng: np.random.Generator) -> np.ndarray:
    """Strictly positive random simplex vectors (Dirichlet(1))."""
    return rng.dirichlet(np.ones(d), size=topology.num_directed)


def incoming_products(
    topology: GraphTopology, M: np.ndarray, rescale: bool = False, rows: slice = slice(None)
) -> np.ndarray:
    """P_{u->v}(i) = prod over w in N(u)\\{v} of m_{w->u}(i), for every edge.

    Leaves get the empty product (all ones).  With ``rescale`` each row with at
    least two factors is divided by its max entry, which leaves every
    normalised quantity built from it unchanged.  ``rows`` restricts the
    computation to a block of directed edges.
    """
    table = topology.incoming[rows]
    ext = np.vstack([M, np.ones((1, M.shape[1]))])
    if table.shape[1] == 0:
        return np.ones((len(table), M.shape[1]))
    P = ext[table[:, 0]].copy()
    for k in range(1, table.shape[1]):
        P *= ext[table[:, k]]
    if rescale and table.shape[1] >= 2:
        multi = table[:, 1] < topology.num_directed
        P[multi] /= P[multi].max(axis=1, keepdims=True)
    return P


def incoming_product(topology: GraphTopology, M: np.ndarray, edge: int) -> np.ndarray:
    """Incoming product for one directed edge."""
    P = np.ones(M.shape[1])
    for f in topology.incoming[edge]:
        if f < topology.num_directed:
            P = P * M[f]
    return P


def in_degrees(topology: GraphTopology) -> np.ndarray:
    """Number of messages feeding each directed edge: deg(u) - 1."""
    return topology.degrees[topology.src] - 1


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1, keepdims=True)
    if not np.all(s > 0) or not np.all(np.isfinite(s)):
        raise FloatingPointError("unnormalised message has zero or non-finite mass; input is corrupted")
    return x / s


def _apply_tables(mrf: PairwiseMRF, x: np.ndarray) -> np.ndarray:
    """Row e of the result is x[e] @ Psi_e."""
    stack, tid = mrf.directed_tables
    if len(stack) > _GROUP_LIMIT:
        return np.einsum("ei,eij->ej", x, stack[tid])
    out = np.empty_like(x)
    for t in np.unique(tid):
        rows = tid == t
        out[rows] = x[rows] @ stack[t]
    return out


def bp_update_edge(mrf: PairwiseMRF, M: np.ndarray, edge: int) -> np.ndarray:
    """New normalised message on one directed edge, read from ``M``."""
    u = mrf.topology.src[edge]
    x = mrf.node_potentials[u] * incoming_product(mrf.topology, M, edge)
    out = x @ mrf.directed_matrix(edge)
    total = out.sum()
    if not total > 0:
        raise FloatingPointError(f"edge {edge}: unnormalised message has zero mass; input is corrupted")
    return out / total


def bp_sweep(mrf: PairwiseMRF, M: np.ndarray, counters: Optional[CostCounters] = None) -> np.ndarray:
    """One synchronous BP round: every output row is computed from ``M``."""
    top = mrf.topology
    P = incoming_products(top, M, rescale=True)
    x = mrf.node_potentials[top.src] * P
    out = _normalize_rows(_apply_tables(mrf, x))
    if counters is not None:
        counters.arithmetic_ops += int(bp_edge_ops(in_degrees(top), mrf.d).sum())
        counters.edge_updates += top.num_directed
    return out


class FixedPointResult(NamedTuple):
    messages: np.ndarray
    iterations: int
    converged: bool


def bp_fixed_point(
    mrf: PairwiseMRF,
    M0: Optional[np.ndarray] = None,
    tol: float = 1e-4,
    max_iter: int = 10_000,
    counters: Optional[CostCounters] = None,
) -> FixedPointResult:
    """Iterate sweeps until ||M^{t+1} - M^t||_2 < tol.

    Non-convergence is reported through ``converged``; the last iterate is
    returned either way.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    M = uniform_messages(mrf.topology, mrf.d) if M0 is None else np.asarray(M0, dtype=float)
    for it in range(1, max_iter + 1):
        new = bp_sweep(mrf, M, counters)
        step = np.linalg.norm(new - M)
        M = new
        if step < tol:
            return FixedPointResult(M, it, True)
    return FixedPointResult(M, max_iter, False)


def compute_marginals(mrf: PairwiseMRF, M: np.ndarray) -> np.ndarray:
    """mu_v proportional to psi_v times every message into v; shape (n, d)."""
    top = mrf.topology
    ext = np.vstack([M, np.ones((1, mrf.d))])
    prod = mrf.node_potentials.copy()
    for k in range(top.into_node.shape[1]):
        prod *= ext[top.into_node[:, k]]
        prod /= prod.max(axis=1, keepdims=True)
    return _normalize_rows(prod)


def brute_force_marginals(mrf: PairwiseMRF, max_states: int = 10**7) -> np.ndarray:
    """Exact single-node marginals by enumerating all d^n joint states."""
    n, d = mrf.topology.num_nodes, mrf.d
    size = d**n
    if size > max_states:
        raise MRFError(f"enumeration needs d^n = {d}^{n} = {size} states, above the limit {max_states}")
    joint = np.ones((d,) * n)
    for u in range(n):
        shape = [1] * n
        shape[u] = d
        joint = joint * mrf.node_potentials[u].reshape(shape)
    for k, (a, b) in enumerate(mrf.topology.edges):
        shape = [1] * n
        shape[a] = shape[b] = d
        joint = joint * mrf.edge_matrix(k).reshape(shape)
    joint /= joint.sum()
    out = np.empty((n, d))
    for u in range(n):
        axes = tuple(a for a in range(n) if a != u)
        out[u] = joint.sum(axis=axes)
    return out

"""Contraction certificates, box bounds, Jacobians and tree nilpotency.

Everything here is a pure function of the model (and, for Jacobians, a
message set).  The generic certificate works for any strictly positive
potentials; the Potts closed forms exist as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .bp import incoming_product
from .model import GraphTopology, PairwiseMRF
from .sbp import NormalizedEdgeData, precompute_edge_data


class ConvergenceError(RuntimeError):
    pass


class NotNilpotentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# zeroth-order box


class BoxBounds(NamedTuple):
    """Row-wise min / max of each Gamma, shape ``(2|E|, d)`` each."""

    lower: np.ndarray
    upper: np.ndarray


def box_bounds(edge_data: NormalizedEdgeData) -> BoxBounds:
    lo = edge_data.gamma_tables.min(axis=2)
    hi = edge_data.gamma_tables.max(axis=2)
    return BoxBounds(lo[edge_data.table_id], hi[edge_data.table_id])


def prefactor(edge_data: NormalizedEdgeData, bounds: Optional[BoxBounds] = None) -> float:
    """R = 4 * sum_e max_i U_e(i) / sum_e min_i L_e(i)."""
    b = bounds if bounds is not None else box_bounds(edge_data)
    return 4.0 * float(b.upper.max(axis=1).sum() / b.lower.min(axis=1).sum())


# ---------------------------------------------------------------------------
# phi / chi and their sums


def _feeders(topology: GraphTopology, edge: int) -> list[int]:
    return [int(f) for f in topology.incoming[edge] if f < topology.num_directed]


def phi_chi_bounds(
    mrf: PairwiseMRF, edge_data: NormalizedEdgeData, bounds: BoxBounds, edge: int, in_edge: int
) -> tuple[float, float]:
    """Upper bounds on phi and chi for edge (u -> v) and feeder (w -> u).

    Message factors in numerators are replaced by their upper bound and those
    in denominators by their lower bound.
    """
    top = mrf.topology
    feeders = _feeders(top, edge)
    if in_edge not in feeders:
        raise ValueError(f"directed edge {in_edge} does not feed edge {edge}")
    beta = edge_data.beta[edge]
    lo, hi = bounds
    den = beta * np.prod(lo[feeders], axis=0)
    others = [f for f in feeders if f != in_edge]
    num_phi = beta * np.prod(hi[others], axis=0)
    num_chi = beta * np.prod(hi[feeders], axis=0)
    total = den.sum()
    phi = float(num_phi.max() / total)
    chi = float(num_chi.max() / total * (1.0 / lo[in_edge]).max())
    return phi, chi


def _pair_terms(mrf, edge_data, bounds) -> dict[tuple[int, int], float]:
    """sqrt(phi (phi + chi)) for every (edge, feeder) pair."""
    terms = {}
    for e in range(mrf.topology.num_directed):
        for f in _feeders(mrf.topology, e):
            phi, chi = phi_chi_bounds(mrf, edge_data, bounds, e, f)
            terms[(e, f)] = math.sqrt(phi * (phi + chi))
    return terms


def capital_phi(mrf: PairwiseMRF, edge_data: NormalizedEdgeData, bounds: BoxBounds, edge: int) -> float:
    """Sum over feeders (w -> u) of edge (u -> v)."""
    total = 0.0
    for f in _feeders(mrf.topology, edge):
        phi, chi = phi_chi_bounds(mrf, edge_data, bounds, edge, f)
        total += math.sqrt(phi * (phi + chi))
    return total


def capital_phi_prime(mrf: PairwiseMRF, edge_data: NormalizedEdgeData, bounds: BoxBounds, in_edge: int) -> float:
    """Sum over the edges (u -> v), v != w, that directed edge (w -> u) feeds."""
    top = mrf.topology
    w, u = int(top.src[in_edge]), int(top.dst[in_edge])
    total = 0.0
    for v in top.adjacency[u]:
        if v == w:
            continue
        phi, chi = phi_chi_bounds(mrf, edge_data, bounds, top.edge_id(u, v), in_edge)
        total += math.sqrt(phi * (phi + chi))
    return total


# ---------------------------------------------------------------------------
# Perron deflation


def perron_vector(gamma: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Positive b with Gamma b = b, sum(b) = 1, by power iteration."""
    d = gamma.shape[0]
    b = np.full(d, 1.0 / d)
    for _ in range(max_iter):
        nxt = gamma @ b
        nxt /= nxt.sum()
        if np.abs(nxt - b).sum() < tol:
            return nxt
        b = nxt
    raise ConvergenceError(f"Perron power iteration did not converge in {max_iter} steps")


def _top_singular_value(D: np.ndarray, tol: float, max_iter: int) -> float:
    x = np.random.default_rng(0).standard_normal(D.shape[1])
    x /= np.linalg.norm(x)
    scale = np.abs(D).max()
    if scale == 0.0:
        return 0.0
    for _ in range(max_iter):
        y = D @ x
        z = D.T @ y
        s2 = float(y @ y)
        if s2 <= (1e-15 * scale) ** 2:
            return 0.0
        resid = np.linalg.norm(z - s2 * x)
        norm = np.linalg.norm(z)
        x = z / norm
        if resid <= tol * s2:
            return float(np.linalg.norm(D @ x))
    raise ConvergenceError(f"singular value iteration did not converge in {max_iter} steps")


def deflated_operator_norm(gamma: np.ndarray, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest singular value of Gamma - b 1^T / (1^T b), b the Perron vector."""
    gamma = np.asarray(gamma, dtype=float)
    b = perron_vector(gamma)
    D = gamma - np.outer(b, np.ones(len(b))) / b.sum()
    return _top_singular_value(D, tol, max_iter)


# ---------------------------------------------------------------------------
# certificate


@dataclass
class ContractionReport:
    lipschitz_bound: float
    sigma: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    phi_prime: np.ndarray = field(repr=False)
    contractive: bool = False
    gamma: Optional[float] = None
    prefactor: float = float("nan")

    def to_text(self) -> str:
        rows = [
            ("lipschitz_bound", f"{self.lipschitz_bound:.17g}"),
            ("contractive", str(self.contractive).lower()),
            ("gamma", "none" if self.gamma is None else f"{self.gamma:.17g}"),
            ("prefactor", f"{self.prefactor:.17g}"),
            ("max_deflated_norm", f"{self.sigma.max(initial=0.0):.17g}"),
            ("max_phi", f"{self.phi.max(initial=0.0):.17g}"),
            ("max_phi_prime", f"{self.phi_prime.max(initial=0.0):.17g}"),
            ("num_directed_edges", str(len(self.sigma))),
        ]
        return "".join(f"{k}={v}\n" for k, v in rows)


def lipschitz_bound(mrf: PairwiseMRF, edge_data: Optional[NormalizedEdgeData] = None) -> ContractionReport:
    """L = 2 max_e sigma_e * max_e Phi(e) * max_e Phi'(e)."""
    if edge_data is None:
        edge_data = precompute_edge_data(mrf)
    bounds = box_bounds(edge_data)
    top = mrf.topology
    n = top.num_directed
    by_table = {int(t): deflated_operator_norm(edge_data.gamma_tables[t]) for t in np.unique(edge_data.table_id)}
    sigma = np.array([by_table[int(t)] for t in edge_data.table_id])
    terms = _pair_terms(mrf, edge_data, bounds)
    phi = np.zeros(n)
    phi_prime = np.zeros(n)
    for (e, f), val in terms.items():
        phi[e] += val
        phi_prime[f] += val
    L = 2.0 * sigma.max(initial=0.0) * phi.max(initial=0.0) * phi_prime.max(initial=0.0)
    contractive = L < 1.0
    return ContractionReport(
        lipschitz_bound=float(L),
        sigma=sigma,
        phi=phi,
        phi_prime=phi_prime,
        contractive=contractive,
        gamma=2.0 * (1.0 - L) if contractive else None,
        prefactor=prefactor(edge_data, bounds),
    )


class PottsCheck(NamedTuple):
    lhs: float
    rhs: float
    contractive: bool
    relaxed_bound: float
    lipschitz_closed_form: float


def potts_contraction_check(d: int, eta: float, node_potentials, degrees: Sequence[int]) -> PottsCheck:
    """Closed-form Potts contraction test.

    ``relaxed_bound`` is 4(1-eta)(1+(d-1)eta) max_u (deg-1)^2/eta^(2 deg) r_u^2
    with r_u = max_j psi_u(j) / sum psi_u; ``lhs < rhs`` iff it is below 1.
    ``lipschitz_closed_form`` is the generic certificate evaluated with the
    Potts closed forms for the deflated norm, phi and chi (before bounding
    phi by chi), and so should match ``lipschitz_bound`` exactly.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    psi = np.asarray(node_potentials, dtype=float)
    deg = np.asarray(degrees, dtype=float)
    ratio = psi.max(axis=1) / psi.sum(axis=1)
    s = 1.0 + (d - 1) * eta
    lhs = float(np.max((deg - 1) / eta**deg * ratio))
    rhs = math.inf if eta == 1.0 else math.sqrt(1.0 / (4.0 * (1.0 - eta) * s))
    relaxed = float(4.0 * (1.0 - eta) * s * np.max((deg - 1) ** 2 / eta ** (2 * deg) * ratio**2))
    phi = s / eta ** (deg - 1) * ratio
    chi = s / eta**deg * ratio
    big_phi = float(np.max(np.maximum(deg - 1, 0) * np.sqrt(phi * (phi + chi))))
    closed = 2.0 * (1.0 - eta) / s * big_phi**2
    return PottsCheck(lhs, rhs, lhs < rhs, relaxed, closed)


# ---------------------------------------------------------------------------
# Jacobians


def jacobian_q(mrf: PairwiseMRF, M: np.ndarray, edge: int, in_edge: int, beta: Optional[np.ndarray] = None) -> np.ndarray:
    """d x d matrix of d q_{u->v}(i) / d m_{w->u}(j).

    q is the sampling distribution of ``edge``; ``M`` must be strictly
    positive on ``in_edge``.
    """
    top = mrf.topology
    if in_edge not in _feeders(top, edge):
        raise ValueError(f"directed edge {in_edge} does not feed edge {edge}")
    m = M[in_edge]
    if np.any(m <= 0):
        raise ValueError(f"message on edge {in_edge} has a zero entry; Jacobian undefined")
    if beta is None:
        beta = precompute_edge_data(mrf).beta[edge]
    P = incoming_product(top, M, edge)
    bp = beta * P
    S = bp.sum()
    ratio = P / m
    J = -np.outer(bp, beta) / S**2
    J[np.diag_indices_from(J)] += beta / S
    return J * ratio[None, :]


def _sample_box_messages(bounds: BoxBounds, rng: np.random.Generator) -> np.ndarray:
    lo, hi = bounds
    M = lo + (hi - lo) * rng.random(lo.shape)
    return M / M.sum(axis=1, keepdims=True)


def estimate_jacobian_envelope(mrf: PairwiseMRF, samples: int, seed: int) -> np.ndarray:
    """Elementwise max of |dF/dM| over random messages in the box.

    This is a lower estimate of the envelope, not a certificate: it only
    sees the sampled points.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    ed = precompute_edge_data(mrf)
    bounds = box_bounds(ed)
    top = mrf.topology
    d = mrf.d
    A = np.zeros((top.num_directed * d, top.num_directed * d))
    rng = np.random.default_rng(seed)
    pairs = [(e, f) for e in range(top.num_directed) for f in _feeders(top, e)]
    for _ in range(samples):
        M = _sample_box_messages(bounds, rng)
        for e, f in pairs:
            block = np.abs(ed.gamma(e) @ jacobian_q(mrf, M, e, f, ed.beta[e]))
            view = A[e * d : (e + 1) * d, f * d : (f + 1) * d]
            np.maximum(view, block, out=view)
    return A


# ---------------------------------------------------------------------------
# nilpotency


@dataclass
class NilpotencyCertificate:
    block_indicator: np.ndarray
    degree: Optional[int]

    @property
    def nilpotent(self) -> bool:
        return self.degree is not None


def nilpotency_degree(pattern: np.ndarray) -> Optional[int]:
    """Smallest r >= 1 with pattern^r = 0 (boolean powers), else None."""
    B = (np.asarray(pattern) != 0).astype(np.int64)
    power = B.copy()
    for r in range(1, max(len(B), 1) + 1):
        if not power.any():
            return r
        power = ((power @ B) > 0).astype(np.int64)
    return None


def block_indicator(topology: GraphTopology) -> NilpotencyCertificate:
    """B[(u->v), (w->u)] = 1 for every w in N(u) \\ {v}."""
    n = topology.num_directed
    B = np.zeros((n, n), dtype=np.int64)
    for e in range(n):
        for f in _feeders(topology, e):
            B[e, f] = 1
    return NilpotencyCertificate(B, nilpotency_degree(B))


def tree_error_bound(A: np.ndarray, t: int) -> np.ndarray:
    """4 (I - 2A)^{-1} 1 / sqrt(t) via the finite Neumann series of nilpotent A."""
    if t < 1:
        raise ValueError("t must be at least 1")
    A = np.asarray(A, dtype=float)
    r = nilpotency_degree(A)
    if r is None:
        raise NotNilpotentError("matrix is not nilpotent; the series does not terminate")
    term = np.ones(len(A))
    total = term.copy()
    for _ in range(1, r):
        term = 2.0 * (A @ term)
        total += term
    return 4.0 * total / math.sqrt(t)


# ---------------------------------------------------------------------------
# step-size products


def damping_product(alpha: float, i: int, t: int) -> float:
    """prod_{l=i+1}^{t+2} (1 - alpha / l)."""
    return math.prod(1.0 - alpha / ell for ell in range(i + 1, t + 3))


def damping_product_bound(alpha: float, i: int, t: int) -> float:
    """((i + 1) / (t + 3)) ** alpha."""
    return ((i + 1) / (t + 3)) ** alpha

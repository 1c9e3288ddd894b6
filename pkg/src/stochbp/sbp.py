"""Stochastic belief propagation.

Each round, every directed edge samples one column of its normalised
compatibility matrix with probability proportional to incoming product times
column weight, and moves its message a step towards that column.  The mean of
that move is the damped BP update, at O(d) cost per edge instead of O(d^2).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from .bp import bp_sweep, in_degrees, incoming_products, uniform_messages
from .counters import CostCounters, bits_per_update, sbp_edge_ops
from .model import PairwiseMRF
from .rng import stream_uniforms

# ---------------------------------------------------------------------------
# step sizes


@dataclass(frozen=True)
class Harmonic:
    """lambda_t = c / (t + 1), clamped to 1."""

    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"harmonic coefficient must be positive, got {self.c}")

    def raw(self, t: int) -> float:
        return self.c / (t + 1)


@dataclass(frozen=True)
class TheoremTwoB:
    """lambda_t = alpha / (gamma (t + 2)) with 1 < alpha < 2."""

    alpha: float
    gamma: float

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (1, 2), got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def raw(self, t: int) -> float:
        return self.alpha / (self.gamma * (t + 2))


@dataclass(frozen=True)
class TheoremTwoC:
    """lambda_t = 1 / (gamma (t + 1))."""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def raw(self, t: int) -> float:
        return 1.0 / (self.gamma * (t + 1))


StepSchedule = Union[Harmonic, TheoremTwoB, TheoremTwoC]


def step_size(schedule: StepSchedule, t: int) -> float:
    if t < 0:
        raise ValueError(f"iteration must be non-negative, got {t}")
    return min(1.0, schedule.raw(t))


def parse_schedule(text: str) -> StepSchedule:
    """``harmonic:c``, ``thm2b:alpha,gamma`` or ``thm2c:gamma``."""
    name, _, args = text.partition(":")
    vals = [float(a) for a in args.split(",") if a.strip()]
    name = name.strip().lower()
    if name == "harmonic":
        return Harmonic(*vals)
    if name == "thm2b":
        return TheoremTwoB(*vals)
    if name == "thm2c":
        return TheoremTwoC(*vals)
    raise ValueError(f"unknown schedule {text!r}")


# ---------------------------------------------------------------------------
# precomputation


@dataclass(frozen=True, eq=False)
class NormalizedEdgeData:
    """Column-normalised compatibility matrices and column weights.

    ``gamma_tables[table_id[e]]`` is Gamma for directed edge ``e``; it depends
    only on the edge table, so tied tables share storage.  ``beta[e]`` holds
    the column weights, which do depend on the source node potential.
    """

    gamma_tables: np.ndarray
    table_id: np.ndarray
    beta: np.ndarray

    def gamma(self, e: int) -> np.ndarray:
        return self.gamma_tables[self.table_id[e]]


def precompute_edge_data(mrf: PairwiseMRF) -> NormalizedEdgeData:
    stack, tid = mrf.directed_tables
    # column j belongs to source state j: Gamma(i, j) ~ Psi_{u->v}(j, i) psi_u(j)
    cols = np.transpose(stack, (0, 2, 1))
    colsum = cols.sum(axis=1)
    gammas = cols / colsum[:, None, :]
    beta = mrf.node_potentials[mrf.topology.src] * colsum[tid]
    return NormalizedEdgeData(gammas, tid, beta)


def sampling_distribution(beta: np.ndarray, product: np.ndarray) -> np.ndarray:
    """p(j) proportional to product(j) beta(j); works row-wise on 2-D input."""
    w = np.asarray(product) * np.asarray(beta)
    total = w.sum(axis=-1, keepdims=True)
    if not np.all(total > 0):
        raise FloatingPointError("sampling weights underflowed to zero; rescale the incoming product first")
    return w / total


def sample_index(dist: np.ndarray, U: float) -> int:
    """Smallest j whose cumulative mass strictly exceeds U."""
    if not 0.0 <= U < 1.0:
        raise ValueError(f"U must lie in [0, 1), got {U}")
    return int(_sample_rows(np.asarray(dist, dtype=float)[None, :], np.array([U]))[0])


def _sample_rows(p: np.ndarray, U: np.ndarray) -> np.ndarray:
    cs = np.cumsum(p, axis=1)
    J = np.count_nonzero(cs <= U[:, None], axis=1)
    # rounding can leave the total a hair below U: fall back to the last
    # state that carries mass
    last = p.shape[1] - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
    return np.minimum(J, last)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SbpState:
    messages: np.ndarray
    t: int = 0
    seed: int = 0
    counters: CostCounters = field(default_factory=CostCounters)


def _sweep_rows(mrf, edge_data, M, rows, lam, U, out, sampled):
    top = mrf.topology
    P = incoming_products(top, M, rescale=True, rows=rows)
    p = sampling_distribution(edge_data.beta[rows], P)
    J = _sample_rows(p, U[rows])
    cols = edge_data.gamma_tables[edge_data.table_id[rows], :, J]
    out[rows] = (1.0 - lam) * M[rows] + lam * cols
    sampled[rows] = J


def sbp_sweep(
    state: SbpState,
    mrf: PairwiseMRF,
    edge_data: NormalizedEdgeData,
    schedule: StepSchedule,
    threads: int = 1,
) -> SbpState:
    """One synchronous SBP round; returns the next state.

    Randomness comes from the counter stream at ``(state.seed, e, state.t)``,
    so ``threads`` only changes how rows are split, never the result.
    """
    top = mrf.topology
    n = top.num_directed
    M = state.messages
    lam = step_size(schedule, state.t)
    U = stream_uniforms(state.seed, np.arange(n), state.t)
    out = np.empty_like(M)
    sampled = np.empty(n, dtype=np.intp)
    if threads <= 1 or n < 2:
        _sweep_rows(mrf, edge_data, M, slice(0, n), lam, U, out, sampled)
    else:
        bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(lambda r: _sweep_rows(mrf, edge_data, M, r, lam, U, out, sampled), chunks))
    counters = state.counters.copy()
    counters.arithmetic_ops += int(sbp_edge_ops(in_degrees(top), mrf.d, sampled).sum())
    counters.bits_transmitted += n * bits_per_update(mrf.d)
    counters.edge_updates += n
    return SbpState(out, state.t + 1, state.seed, counters)


def sbp_sweep_indices(state: SbpState, mrf: PairwiseMRF, edge_data: NormalizedEdgeData) -> np.ndarray:
    """Column indices the next sweep from ``state`` would transmit."""
    top = mrf.topology
    rows = slice(0, top.num_directed)
    P = incoming_products(top, state.messages, rescale=True, rows=rows)
    p = sampling_distribution(edge_data.beta, P)
    return _sample_rows(p, stream_uniforms(state.seed, np.arange(top.num_directed), state.t))


def expected_sweep(mrf: PairwiseMRF, M: np.ndarray, lam: float) -> np.ndarray:
    """Conditional mean of an SBP round: (1 - lam) M + lam F(M)."""
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lam must lie in (0, 1], got {lam}")
    return (1.0 - lam) * M + lam * bp_sweep(mrf, M)


# ---------------------------------------------------------------------------
# runs


@dataclass
class ErrorTrace:
    """Error against a reference fixed point after each sweep ``t``.

    ``metric`` is ``"nse"`` (||M - M*||^2 / ||M*||^2) or ``"maxabs"``.
    """

    t: np.ndarray
    error: np.ndarray
    metric: str = "nse"

    def __len__(self) -> int:
        return len(self.t)


def trace_error(M: np.ndarray, reference: np.ndarray, metric: str = "nse") -> float:
    if metric == "nse":
        return float(np.sum((M - reference) ** 2) / np.sum(reference**2))
    if metric == "maxabs":
        return float(np.max(np.abs(M - reference)))
    raise ValueError(f"unknown error metric {metric!r}")


class SbpRun(NamedTuple):
    messages: np.ndarray
    trace: Optional[ErrorTrace]
    counters: CostCounters


def run_sbp(
    mrf: PairwiseMRF,
    M0: Optional[np.ndarray],
    schedule: StepSchedule,
    seed: int,
    T: int,
    reference: Optional[np.ndarray] = None,
    metric: str = "nse",
    threads: int = 1,
    edge_data: Optional[NormalizedEdgeData] = None,
) -> SbpRun:
    """Run T sweeps; with a reference, record the error after each one."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if edge_data is None:
        edge_data = precompute_edge_data(mrf)
    M = uniform_messages(mrf.topology, mrf.d) if M0 is None else np.array(M0, dtype=float)
    state = SbpState(M, 0, seed)
    errors = np.empty(T) if reference is not None else None
    for k in range(T):
        state = sbp_sweep(state, mrf, edge_data, schedule, threads)
        if errors is not None:
            errors[k] = trace_error(state.messages, reference, metric)
    trace = ErrorTrace(np.arange(1, T + 1), errors, metric) if errors is not None else None
    return SbpRun(state.messages, trace, state.counters)

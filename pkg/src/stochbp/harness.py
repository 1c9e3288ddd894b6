"""Experiment presets, error statistics, timing and CSV output."""

from __future__ import annotations

import csv
import statistics
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .analysis import lipschitz_bound
from .bp import bp_fixed_point, bp_sweep, uniform_messages
from .counters import CostCounters
from .model import PairwiseMRF, PottsParams, build_topology, generate_potts_mrf, potts_mrf
from .sbp import (
    ErrorTrace,
    Harmonic,
    SbpState,
    StepSchedule,
    precompute_edge_data,
    run_sbp,
    sbp_sweep,
    trace_error,
)


class NonConvergenceError(RuntimeError):
    """The BP reference did not reach its tolerance."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


@dataclass(frozen=True)
class RunConfig:
    """Instance recipe plus SBP run parameters.

    ``size`` is ``(n,)`` for chain/tree/star (leaves for star) and
    ``(rows, cols)`` for grid.  With ``uniform_potentials`` every node
    potential is 1; otherwise they are drawn from ``potts.lam``/``potts.sigma``
    with ``seed``.  Sample path k uses SBP seed ``seed + k``.
    """

    topology: str = "chain"
    size: tuple[int, ...] = (100,)
    d: int = 64
    potts: PottsParams = PottsParams(0.02)
    seed: int = 0
    schedule: StepSchedule = Harmonic(2.0)
    T: int = 10_000
    num_paths: int = 10
    reference_tol: float = 1e-10
    reference_max_iter: int = 100_000
    uniform_potentials: bool = False
    metric: str = "nse"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be at least 1, got {self.T}")
        if self.num_paths < 1:
            raise ValueError(f"num_paths must be at least 1, got {self.num_paths}")
        if not self.reference_tol > 0:
            raise ValueError("reference_tol must be positive")


def build_instance(config: RunConfig) -> PairwiseMRF:
    if config.topology == "tree":
        top = build_topology("tree", *config.size, seed=config.seed)
    else:
        top = build_topology(config.topology, *config.size)
    if config.uniform_potentials:
        return potts_mrf(top, config.d, config.potts.eta)
    return generate_potts_mrf(top, config.d, config.potts, config.seed)


def _fig4(eta: float) -> Callable[..., RunConfig]:
    def make(**overrides) -> RunConfig:
        return replace(RunConfig("chain", (100,), 64, PottsParams(eta, 0.1, 0.1), 0, Harmonic(2.0), 10_000, 10), **overrides)

    return make


def _fig5(kind: str, size: tuple[int, ...]) -> Callable[..., RunConfig]:
    def make(**overrides) -> RunConfig:
        base = RunConfig(kind, size, 128, PottsParams(0.1, 0.1, 0.1), 0, Harmonic(2.0), 10_000, 20)
        return replace(base, **overrides)

    return make


PRESETS: dict[str, Callable[..., RunConfig]] = {
    "fig4a": _fig4(0.02),
    "fig4b": _fig4(0.05),
    "fig5-chain": _fig5("chain", (100,)),
    "fig5-grid": _fig5("grid", (10, 10)),
}

FIG5_DIMENSIONS = (128, 256, 512, 1024)


def preset(name: str, **overrides) -> RunConfig:
    """Named experiment configuration; keyword overrides replace fields."""
    try:
        return PRESETS[name](**overrides)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def reference_messages(mrf: PairwiseMRF, config: RunConfig) -> np.ndarray:
    res = bp_fixed_point(mrf, tol=config.reference_tol, max_iter=config.reference_max_iter)
    if not res.converged:
        raise NonConvergenceError(
            f"BP reference did not reach tol {config.reference_tol} in {res.iterations} iterations", res.iterations
        )
    return res.messages


def run_sample_paths(
    config: RunConfig, workers: int = 1, mrf: Optional[PairwiseMRF] = None, reference: Optional[np.ndarray] = None
) -> list[ErrorTrace]:
    """``num_paths`` independent SBP runs, each traced against the BP fixed point."""
    if mrf is None:
        mrf = build_instance(config)
    if not mrf.topology.is_tree():
        report = lipschitz_bound(mrf)
        if not report.contractive:
            warnings.warn(
                f"instance has cycles and no contraction certificate (L = {report.lipschitz_bound:.4g}); "
                "the BP fixed point may not be unique",
                RuntimeWarning,
                stacklevel=2,
            )
    if reference is None:
        reference = reference_messages(mrf, config)
    edge_data = precompute_edge_data(mrf)

    def one(k: int) -> ErrorTrace:
        return run_sbp(mrf, None, config.schedule, config.seed + k, config.T, reference, config.metric, edge_data=edge_data).trace

    if workers <= 1:
        return [one(k) for k in range(config.num_paths)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(config.num_paths)))


def mse_curve(traces: Sequence[ErrorTrace]) -> ErrorTrace:
    """Pointwise mean of equally long traces."""
    if len(traces) == 0:
        raise ValueError("need at least one trace")
    first = traces[0]
    for k, tr in enumerate(traces):
        if len(tr) != len(first) or not np.array_equal(tr.t, first.t):
            raise ValueError(f"trace {k} has {len(tr)} points on a different grid than trace 0 ({len(first)})")
        if tr.metric != first.metric:
            raise ValueError(f"trace {k} uses metric {tr.metric!r}, trace 0 uses {first.metric!r}")
    mean = np.mean(np.stack([tr.error for tr in traces]), axis=0)
    return ErrorTrace(first.t.copy(), mean, first.metric)


def loglog_slope(trace: ErrorTrace, t_min: float = 1e2, t_max: float = 1e4) -> float:
    """Least-squares slope of log e_t against log t over t_min <= t <= t_max."""
    t = np.asarray(trace.t, dtype=float)
    e = np.asarray(trace.error, dtype=float)
    mask = (t >= t_min) & (t <= t_max)
    if np.count_nonzero(mask) < 10:
        raise ValueError(f"need at least 10 points in [{t_min}, {t_max}], found {np.count_nonzero(mask)}")
    if np.any(e[mask] <= 0):
        raise ValueError("zero error inside the fit window; floor the trace (e.g. at 1e-300) before fitting")
    return float(np.polyfit(np.log(t[mask]), np.log(e[mask]), 1)[0])


# ---------------------------------------------------------------------------
# timing


@dataclass
class AlgorithmTiming:
    per_iteration_seconds: float
    total_seconds: float
    iterations: int
    arithmetic_ops: int
    bits_transmitted: Optional[int]
    edge_updates: int
    status: str

    @property
    def ops_per_edge_update(self) -> float:
        return self.arithmetic_ops / self.edge_updates


@dataclass
class TimingRecord:
    """BP and SBP costs to reach normalised squared error ``delta``."""

    delta: float
    bp: AlgorithmTiming
    sbp: AlgorithmTiming
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, Union[int, float, str]]]:
        out: list[tuple[str, Union[int, float, str]]] = [("delta", self.delta)]
        out += list(self.meta.items())
        for name, rec in (("bp", self.bp), ("sbp", self.sbp)):
            out += [
                (f"{name}.per_iteration_seconds", rec.per_iteration_seconds),
                (f"{name}.total_seconds", rec.total_seconds),
                (f"{name}.iterations", rec.iterations),
                (f"{name}.arithmetic_ops", rec.arithmetic_ops),
                (f"{name}.ops_per_edge_update", rec.ops_per_edge_update),
                (f"{name}.edge_updates", rec.edge_updates),
                (f"{name}.status", rec.status),
            ]
            if rec.bits_transmitted is not None:
                out.append((f"{name}.bits_transmitted", rec.bits_transmitted))
        return out

    @property
    def converged(self) -> bool:
        return self.bp.status == "ok" and self.sbp.status == "ok"


def _median_time(fn: Callable[[], object], repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def _bp_to_delta(mrf, reference, delta, max_iter):
    counters = CostCounters()
    M = uniform_messages(mrf.topology, mrf.d)
    for it in range(1, max_iter + 1):
        M = bp_sweep(mrf, M, counters)
        if trace_error(M, reference) <= delta:
            return it, counters, "ok"
    return max_iter, counters, "not_converged"


def _sbp_to_delta(mrf, edge_data, reference, delta, schedule, seed, max_iter):
    state = SbpState(uniform_messages(mrf.topology, mrf.d), 0, seed)
    for it in range(1, max_iter + 1):
        state = sbp_sweep(state, mrf, edge_data, schedule)
        if trace_error(state.messages, reference) <= delta:
            return it, state.counters, "ok"
    return max_iter, state.counters, "not_converged"


def benchmark_timing(
    config: RunConfig, delta: float = 0.01, repeats: int = 5, max_bp_iter: int = 10_000, max_sbp_iter: Optional[int] = None
) -> TimingRecord:
    """Wall-clock and op-count comparison on one instance.

    Both algorithms start from uniform messages and stop once the normalised
    squared error against the BP fixed point is at most ``delta``.  Each
    timing is the median of ``repeats`` sequential runs.  SBP uses seed
    ``config.seed`` and at most ``config.T`` rounds unless ``max_sbp_iter``
    is given.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    mrf = build_instance(config)
    reference = reference_messages(mrf, config)
    edge_data = precompute_edge_data(mrf)
    sbp_cap = config.T if max_sbp_iter is None else max_sbp_iter
    M0 = uniform_messages(mrf.topology, mrf.d)
    s0 = SbpState(M0, 0, config.seed)

    bp_iter, bp_counters, bp_status = _bp_to_delta(mrf, reference, delta, max_bp_iter)
    sbp_iter, sbp_counters, sbp_status = _sbp_to_delta(mrf, edge_data, reference, delta, config.schedule, config.seed, sbp_cap)

    bp = AlgorithmTiming(
        _median_time(lambda: bp_sweep(mrf, M0), repeats),
        _median_time(lambda: _bp_to_delta(mrf, reference, delta, max_bp_iter), repeats),
        bp_iter,
        bp_counters.arithmetic_ops,
        None,
        bp_counters.edge_updates,
        bp_status,
    )
    sbp = AlgorithmTiming(
        _median_time(lambda: sbp_sweep(s0, mrf, edge_data, config.schedule), repeats),
        _median_time(
            lambda: _sbp_to_delta(mrf, edge_data, reference, delta, config.schedule, config.seed, sbp_cap), repeats
        ),
        sbp_iter,
        sbp_counters.arithmetic_ops,
        sbp_counters.bits_transmitted,
        sbp_counters.edge_updates,
        sbp_status,
    )
    meta = {
        "topology": config.topology,
        "n": mrf.topology.num_nodes,
        "directed_edges": mrf.topology.num_directed,
        "d": mrf.d,
        "max_degree": mrf.topology.max_degree,
    }
    return TimingRecord(delta, bp, sbp, meta)


# ---------------------------------------------------------------------------
# CSV


def format_cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(series, path) -> None:
    """Write an ErrorTrace (``t,error``), a list of traces on one grid
    (``t,path_0,...``) or a TimingRecord (``key,value``)."""
    if isinstance(series, ErrorTrace):
        header = ["t", "error"]
        rows = [(int(t), format_cell(float(e))) for t, e in zip(series.t, series.error)]
    elif isinstance(series, TimingRecord):
        header = ["key", "value"]
        rows = [(k, format_cell(v)) for k, v in series.rows()]
    elif isinstance(series, (list, tuple)) and series and all(isinstance(s, ErrorTrace) for s in series):
        mse_curve(series)  # grid check
        header = ["t"] + [f"path_{k}" for k in range(len(series))]
        rows = [
            [int(t)] + [format_cell(float(s.error[i])) for s in series] for i, t in enumerate(series[0].t)
        ]
    else:
        raise TypeError(f"cannot write {type(series).__name__} as CSV")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc

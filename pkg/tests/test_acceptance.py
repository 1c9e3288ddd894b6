"""Acceptance criteria 1-13.  Each test prints its measured quantity on the
summary line emitted by conftest.py."""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from stochbp.analysis import (
    block_indicator,
    box_bounds,
    damping_product,
    damping_product_bound,
    deflated_operator_norm,
    jacobian_q,
    lipschitz_bound,
    potts_contraction_check,
)
from stochbp.bp import (
    bp_fixed_point,
    bp_sweep,
    bp_update_edge,
    brute_force_marginals,
    compute_marginals,
    in_degrees,
    incoming_product,
    incoming_products,
    random_messages,
    uniform_messages,
)
from stochbp.counters import CostCounters, bits_per_update, sbp_edge_ops
from stochbp.harness import RunConfig, build_instance, loglog_slope, mse_curve, preset, run_sample_paths
from stochbp.imaging import DenoiseConfig, add_gaussian_noise, denoise, read_pgm
from stochbp.model import PottsParams, build_topology, graph_diameter, potts_mrf, random_mrf
from stochbp.sbp import (
    Harmonic,
    SbpState,
    TheoremTwoB,
    expected_sweep,
    precompute_edge_data,
    run_sbp,
    sampling_distribution,
    sbp_sweep,
    sbp_sweep_indices,
)

DATA = Path(__file__).parent / "data"


def _random_trees(count=50, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(2, 5))
        top = build_topology("tree", n, seed=int(rng.integers(2**31)))
        out.append(random_mrf(top, d, seed=int(rng.integers(2**31))))
    return out


def test_criterion_1_tree_oracle(detail):
    start = time.perf_counter()
    worst = 0.0
    for mrf in _random_trees():
        res = bp_fixed_point(mrf, tol=1e-13, max_iter=1000)
        assert res.converged
        err = np.max(np.abs(compute_marginals(mrf, res.messages) - brute_force_marginals(mrf)))
        worst = max(worst, float(err))
    elapsed = time.perf_counter() - start
    detail(f"50 trees, max |BP - enumeration| = {worst:.2e} (<= 1e-10), {elapsed:.1f}s")
    assert worst <= 1e-10 and elapsed < 60


def test_criterion_2_tree_termination(detail):
    rng = np.random.default_rng(7)
    worst = 0.0
    for mrf in _random_trees():
        top = mrf.topology
        diam = graph_diameter(top)
        a = random_messages(top, mrf.d, rng)
        b = random_messages(top, mrf.d, rng)
        for _ in range(diam):
            a, b = bp_sweep(mrf, a), bp_sweep(mrf, b)
        worst = max(worst, float(np.max(np.abs(a - b))))
        cert = block_indicator(top)
        assert cert.nilpotent and cert.degree <= diam
        # a path of diam directed edges keeps B^(diam-1) nonzero
        assert cert.degree == diam
    detail(f"max start-dependence after diameter sweeps = {worst:.2e} (<= 1e-12); degree == diameter on all 50")
    assert worst <= 1e-12


def test_criterion_3_expectation_identity(detail):
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(100):
        kind = ["chain", "star", "tree", "grid"][k % 4]
        args = {"chain": (4,), "star": (3,), "tree": (6,), "grid": (2, 3)}[kind]
        top = build_topology(kind, *args)
        d = int(rng.integers(2, 7))
        mrf = random_mrf(top, d, seed=int(rng.integers(2**31)))
        ed = precompute_edge_data(mrf)
        M = random_messages(top, d, rng)
        P = incoming_products(top, M, rescale=True)
        e = int(rng.integers(top.num_directed))
        p = sampling_distribution(ed.beta[e], P[e])
        worst = max(worst, float(np.max(np.abs(ed.gamma(e) @ p - bp_update_edge(mrf, M, e)))))

    # Monte Carlo: mean of one random sweep against its conditional mean
    mrf = random_mrf(build_topology("star", 2), 3, seed=5)
    ed = precompute_edge_data(mrf)
    M = random_messages(mrf.topology, 3, np.random.default_rng(0))
    sched, t = Harmonic(2.0), 3  # lambda = 0.5
    draws = 100_000
    total = np.zeros_like(M)
    total_sq = np.zeros_like(M)
    for s in range(draws):
        out = sbp_sweep(SbpState(M, t, s), mrf, ed, sched).messages
        total += out
        total_sq += out * out
    mean = total / draws
    var = np.maximum(total_sq / draws - mean**2, 0.0)
    se = np.sqrt(var / draws)
    target = expected_sweep(mrf, M, 0.5)
    z = np.abs(mean - target) / np.where(se > 0, se, np.inf)
    exact_ok = np.all(np.abs(mean - target)[se == 0] <= 1e-12)
    detail(f"max |Gamma p - BP| = {worst:.2e} (<= 1e-12); MC max z = {z.max():.2f} (<= 5) over {draws} draws")
    assert worst <= 1e-12
    assert z.max() <= 5.0 and exact_ok


_box_stats = {"cases": 0}


@settings(max_examples=150, deadline=None)
@given(
    st.sampled_from([("chain", (4,)), ("star", (3,)), ("grid", (2, 3)), ("tree", (7,)), ("grid", (3, 3))]),
    st.integers(2, 6),
    st.integers(0, 2**31),
    st.floats(0.05, 1.0),
    st.integers(0, 50),
)
def _box_property(shape, d, seed, lam, t):
    kind, args = shape
    mrf = random_mrf(build_topology(kind, *args), d, seed=seed)
    ed = precompute_edge_data(mrf)
    lo, hi = box_bounds(ed)
    rng = np.random.default_rng(seed)
    tol = 1e-12
    M0 = random_messages(mrf.topology, d, rng)
    # BP sweep from anywhere lands in the box
    M1 = bp_sweep(mrf, M0)
    assert np.all(np.abs(M1.sum(axis=1) - 1) <= tol)
    assert np.all(M1 >= lo - tol) and np.all(M1 <= hi + tol)
    # SBP with full step lands on a column, hence in the box
    S1 = sbp_sweep(SbpState(M0, 0, seed), mrf, ed, Harmonic(1.0)).messages
    assert np.all(np.abs(S1.sum(axis=1) - 1) <= tol)
    assert np.all(S1 >= lo - tol) and np.all(S1 <= hi + tol)
    # damped sweeps: box is preserved once entered; in general the iterate
    # stays in the hull of its start and the box
    damped = Harmonic(lam * (t + 1))  # step exactly lam at round t
    S2 = sbp_sweep(SbpState(S1, t, seed + 1), mrf, ed, damped).messages
    assert np.all(np.abs(S2.sum(axis=1) - 1) <= tol)
    assert np.all(S2 >= lo - tol) and np.all(S2 <= hi + tol)
    S3 = sbp_sweep(SbpState(M0, t, seed), mrf, ed, damped).messages
    assert np.all(np.abs(S3.sum(axis=1) - 1) <= tol)
    assert np.all(S3 >= np.minimum(M0, lo) - tol) and np.all(S3 <= np.maximum(M0, hi) + tol)
    _box_stats["cases"] += 1


def test_criterion_4_simplex_and_box(detail):
    _box_property()
    detail(f"{_box_stats['cases']} random instances: sums within 1e-12, one sweep lands in [L0, U0]")


def _contractive_chain(eta=0.8):
    cfg = RunConfig("chain", (20,), 16, PottsParams(eta), 0, Harmonic(1.0), 10_000, 20, uniform_potentials=True)
    return cfg, build_instance(cfg)


def test_criterion_5_rate_contractive(detail):
    start = time.perf_counter()
    cfg, mrf = _contractive_chain()
    pc = potts_contraction_check(16, 0.8, mrf.node_potentials, mrf.topology.degrees)
    assert pc.contractive
    report = lipschitz_bound(mrf)
    assert report.contractive
    cfg = replace(cfg, schedule=TheoremTwoB(1.5, report.gamma))
    slope = loglog_slope(mse_curve(run_sample_paths(cfg, mrf=mrf)), 1e2, 1e4)
    elapsed = time.perf_counter() - start
    detail(f"gamma = {report.gamma:.4f}, 20-run MSE slope = {slope:.3f} (<= -0.75), {elapsed:.0f}s")
    assert slope <= -0.75 and elapsed < 300


def test_criterion_6_rate_tree_linf(detail):
    start = time.perf_counter()
    cfg, mrf = _contractive_chain()
    cfg = replace(cfg, metric="maxabs")
    slope = loglog_slope(mse_curve(run_sample_paths(cfg, mrf=mrf)), 1e2, 1e4)
    elapsed = time.perf_counter() - start
    detail(f"20-run mean max-abs error slope = {slope:.3f} (in [-1.1, -0.4]), {elapsed:.0f}s")
    assert -1.1 <= slope <= -0.4 and elapsed < 300


def test_criterion_7_potts_certificate(detail):
    rng = np.random.default_rng(77)
    worst_rel = worst_sigma = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 33))
        eta = float(rng.uniform(0.05, 1.0))
        degree = int(rng.integers(1, 6))
        top = build_topology("star", degree)
        mrf = potts_mrf(top, d, eta)
        rep = lipschitz_bound(mrf)
        pc = potts_contraction_check(d, eta, mrf.node_potentials, top.degrees)
        rel = abs(rep.lipschitz_bound - pc.lipschitz_closed_form) / max(1.0, abs(pc.lipschitz_closed_form))
        worst_rel = max(worst_rel, rel)
        assert rep.lipschitz_bound <= pc.relaxed_bound * (1 + 1e-12)
        sigma = deflated_operator_norm(precompute_edge_data(mrf).gamma(0))
        worst_sigma = max(worst_sigma, abs(sigma - (1 - eta) / (1 + (d - 1) * eta)))
    detail(f"generic vs closed form rel. gap = {worst_rel:.1e} (<= 1e-10); sigma gap = {worst_sigma:.1e} (<= 1e-8)")
    assert worst_rel <= 1e-10 and worst_sigma <= 1e-8


def test_criterion_8_jacobian(detail):
    rng = np.random.default_rng(8)
    worst_fd = worst_col = 0.0
    h = 1e-6
    for _ in range(50):
        leaves = int(rng.integers(2, 5))
        d = int(rng.integers(2, 6))
        mrf = random_mrf(build_topology("star", leaves), d, seed=int(rng.integers(2**31)))
        ed = precompute_edge_data(mrf)
        top = mrf.topology
        M = random_messages(top, d, rng)
        leaf = int(rng.integers(1, leaves + 1))
        e = top.edge_id(0, leaf)
        others = [w for w in range(1, leaves + 1) if w != leaf]
        f = top.edge_id(int(rng.choice(others)), 0)
        J = jacobian_q(mrf, M, e, f)
        for j in range(d):
            Mp, Mm = M.copy(), M.copy()
            Mp[f, j] += h
            Mm[f, j] -= h
            qp = sampling_distribution(ed.beta[e], incoming_product(top, Mp, e))
            qm = sampling_distribution(ed.beta[e], incoming_product(top, Mm, e))
            worst_fd = max(worst_fd, float(np.max(np.abs(J[:, j] - (qp - qm) / (2 * h)))))
        worst_col = max(worst_col, float(np.max(np.abs(J.sum(axis=0)))))
    detail(f"max |analytic - central FD| = {worst_fd:.1e} (<= 1e-5); max column sum = {worst_col:.1e} (<= 1e-10)")
    assert worst_fd <= 1e-5 and worst_col <= 1e-10


def test_criterion_9_complexity(detail):
    sweeps = 10
    per_edge = {}
    worst_margin = np.inf
    for d in (64, 128, 256):
        mrf = build_instance(preset("fig5-grid", d=d))
        top = mrf.topology
        ed = precompute_edge_data(mrf)
        bound = (top.max_degree + 6) * d + 3
        state = SbpState(uniform_messages(top, d), 0, 1)
        bp_counter_state = uniform_messages(top, d)
        bp_c = CostCounters()
        for _ in range(sweeps):
            J = sbp_sweep_indices(state, mrf, ed)
            worst_margin = min(worst_margin, float(bound - sbp_edge_ops(in_degrees(top), d, J).max()))
            state = sbp_sweep(state, mrf, ed, Harmonic(2.0))
            bp_counter_state = bp_sweep(mrf, bp_counter_state, bp_c)
        c = state.counters
        assert c.arithmetic_ops / c.edge_updates <= bound
        assert c.bits_transmitted == sweeps * top.num_directed * bits_per_update(d)
        assert c.bits_transmitted == sweeps * 2 * top.num_edges * int(np.ceil(np.log2(d)))
        per_edge[d] = (bp_c.arithmetic_ops / bp_c.edge_updates, c.arithmetic_ops / c.edge_updates)
    bp_ratio = per_edge[256][0] / per_edge[128][0]
    sbp_ratio = per_edge[256][1] / per_edge[128][1]
    detail(f"min slack to (dmax+6)d+3 = {worst_margin:.0f} ops; BP ratio {bp_ratio:.2f} in [3,5], SBP ratio {sbp_ratio:.2f} in [1.6,2.6]; bits exact")
    assert worst_margin >= 0
    assert 3 <= bp_ratio <= 5 and 1.6 <= sbp_ratio <= 2.6


def test_criterion_10_concentration(detail):
    traces = run_sample_paths(preset("fig4a", T=1000))
    final = np.array([tr.error[-1] for tr in traces])
    ratio = final.max() / final.min()
    detail(f"fig4a, 10 paths at t=1000: max/min = {ratio:.2f} (<= 10)")
    assert len(traces) == 10 and ratio <= 10


def test_criterion_11_damping_products(detail):
    violations = checked = 0
    for alpha in (1.2, 1.5, 1.9):
        for t in range(0, 100):
            for i in range(0, t + 2):
                checked += 1
                if damping_product(alpha, i, t) > damping_product_bound(alpha, i, t):
                    violations += 1
    detail(f"{checked} (alpha, i, t) triples, {violations} violations")
    assert violations == 0


def test_criterion_12_denoising(detail):
    start = time.perf_counter()
    clean = read_pgm(DATA / "camera64.pgm")
    cfg = DenoiseConfig(d=16, eta=0.05, noise_sigma=0.1, schedule=Harmonic(1.0), T_bp=5, T_sbp=100, seed=0)
    noisy = add_gaussian_noise(clean, cfg.noise_sigma, seed=0)
    _, bp = denoise(noisy, cfg, "bp", clean)
    _, sbp = denoise(noisy, cfg, "sbp", clean)
    elapsed = time.perf_counter() - start
    detail(
        f"noisy {bp.noisy_mse:.5f}, BP(5) {bp.mse:.5f}, SBP(100) {sbp.mse:.5f}, ratio {sbp.mse / bp.mse:.2f} (<= 1.5), {elapsed:.0f}s"
    )
    assert sbp.mse < sbp.noisy_mse
    assert sbp.mse <= 1.5 * bp.mse
    assert elapsed < 300


def test_criterion_13_determinism(detail):
    mrf = random_mrf(build_topology("grid", 4, 5), 6, seed=13)
    ref = bp_fixed_point(mrf, tol=1e-10).messages
    runs = [run_sbp(mrf, None, Harmonic(2.0), 99, 300, ref, threads=k) for k in (1, 1, 2, 5)]
    same = all(
        np.array_equal(r.trace.error, runs[0].trace.error) and np.array_equal(r.messages, runs[0].messages) for r in runs
    )
    other = run_sbp(mrf, None, Harmonic(2.0), 100, 300, ref)
    detail("4 runs (threads 1,1,2,5) bit-identical; different seed differs")
    assert same and not np.array_equal(other.trace.error, runs[0].trace.error)

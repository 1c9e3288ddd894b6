import numpy as np
import pytest

from stochbp.bp import (
    bp_fixed_point,
    bp_sweep,
    bp_update_edge,
    brute_force_marginals,
    compute_marginals,
    incoming_product,
    incoming_products,
    random_messages,
    uniform_messages,
)
from stochbp.counters import CostCounters, bp_edge_ops
from stochbp.model import GraphTopology, MRFError, build_topology, potts_mrf, random_mrf


def test_sweep_matches_single_edge_updates():
    mrf = random_mrf(build_topology("grid", 3, 3), 4, seed=3)
    M = random_messages(mrf.topology, 4, np.random.default_rng(0))
    full = bp_sweep(mrf, M)
    for e in range(mrf.topology.num_directed):
        np.testing.assert_allclose(full[e], bp_update_edge(mrf, M, e), rtol=1e-13, atol=0)


def test_rescaled_products_are_proportional():
    top = build_topology("star", 4)
    M = random_messages(top, 3, np.random.default_rng(1))
    P = incoming_products(top, M, rescale=True)
    for e in range(top.num_directed):
        raw = incoming_product(top, M, e)
        np.testing.assert_allclose(P[e] / P[e].sum(), raw / raw.sum(), rtol=1e-13)


def test_uniform_potts_fixed_point_is_uniform():
    mrf = potts_mrf(build_topology("grid", 3, 3), 5, 0.3)
    M = uniform_messages(mrf.topology, 5)
    np.testing.assert_allclose(bp_sweep(mrf, M), M, atol=1e-15)


def test_fixed_point_on_chain_matches_enumeration():
    mrf = random_mrf(build_topology("chain", 4), 3, seed=9)
    res = bp_fixed_point(mrf, tol=1e-13)
    assert res.converged
    np.testing.assert_allclose(compute_marginals(mrf, res.messages), brute_force_marginals(mrf), atol=1e-12)


def test_fixed_point_reports_nonconvergence():
    mrf = random_mrf(build_topology("chain", 6), 3, seed=0)
    res = bp_fixed_point(mrf, tol=1e-300, max_iter=3)
    assert not res.converged and res.iterations == 3


def test_single_node_marginal_is_potential():
    mrf = random_mrf(GraphTopology.from_edges(1, []), 4, seed=0)
    M = np.zeros((0, 4))
    expect = mrf.node_potentials[0] / mrf.node_potentials[0].sum()
    np.testing.assert_allclose(compute_marginals(mrf, M)[0], expect)
    np.testing.assert_allclose(brute_force_marginals(mrf)[0], expect)


def test_zero_message_mass_is_reported():
    mrf = potts_mrf(build_topology("chain", 3), 2, 0.5)
    M = uniform_messages(mrf.topology, 2)
    M[0] = 0.0
    with pytest.raises(FloatingPointError):
        bp_sweep(mrf, M)


def test_enumeration_limit():
    mrf = potts_mrf(build_topology("chain", 10), 8, 0.5)
    with pytest.raises(MRFError, match="limit"):
        brute_force_marginals(mrf, max_states=1000)


def test_bp_counter():
    mrf = potts_mrf(build_topology("star", 3), 4, 0.5)
    c = CostCounters()
    bp_sweep(mrf, uniform_messages(mrf.topology, 4), c)
    # hub edges see two incoming messages, leaf edges none
    expect = 3 * int(bp_edge_ops(np.array([2]), 4)[0]) + 3 * int(bp_edge_ops(np.array([0]), 4)[0])
    assert c.arithmetic_ops == expect
    assert c.edge_updates == 6

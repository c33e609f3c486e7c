"""Round-based simulation harness: phases, seeds, message log, protocols."""

import numpy as np
import pytest

from mixloc.constraints import anchor_angle_constraints
from mixloc.errors import CoverageError, RealizabilityError
from mixloc.network import Network, NodeSpec, NoiseSpec
from mixloc.scenarios import fig4_network, mixed_demo_network, mixed_demo_offsets
from mixloc.simnet import SimRun, run
from mixloc.solver import SolverConfig
from mixloc.solver import _scalar_blocks


def test_protocol_validation():
    with pytest.raises(ValueError):
        SimRun(fig4_network(), protocol="carrier-pigeon")


def test_same_master_seed_reproduces_bitwise():
    net = fig4_network()
    noise = NoiseSpec(relpos=1e-3)
    a = run(SimRun(net, noise=noise, master_seed=42))
    b = run(SimRun(net, noise=noise, master_seed=42))
    assert np.array_equal(a.trajectory.final_estimates(), b.trajectory.final_estimates())
    assert np.array_equal(a.trajectory.estimates[0], b.trajectory.estimates[0])
    assert a.messages == b.messages
    for i in range(net.n):
        for key in a.measurements[i].entries:
            assert np.array_equal(
                np.asarray(a.measurements[i].entries[key]),
                np.asarray(b.measurements[i].entries[key]),
            )


def test_different_master_seed_differs():
    net = fig4_network()
    noise = NoiseSpec(relpos=1e-3)
    a = run(SimRun(net, noise=noise, master_seed=1))
    b = run(SimRun(net, noise=noise, master_seed=2))
    assert not np.array_equal(a.trajectory.estimates[0], b.trajectory.estimates[0])
    assert not np.array_equal(
        a.trajectory.final_estimates(), b.trajectory.final_estimates()
    )


def test_pinned_noise_seed_wins_over_master_seed():
    net = fig4_network()
    noise = NoiseSpec(relpos=1e-3, seed=99)
    a = run(SimRun(net, noise=noise, master_seed=1))
    b = run(SimRun(net, noise=noise, master_seed=2))
    for i in range(net.n):
        for key in a.measurements[i].entries:
            assert np.array_equal(
                np.asarray(a.measurements[i].entries[key]),
                np.asarray(b.measurements[i].entries[key]),
            )
    # solver init still follows the master seed
    assert not np.array_equal(a.trajectory.estimates[0], b.trajectory.estimates[0])


def test_pinned_config_seed_wins_over_master_seed():
    net = fig4_network()
    config = SolverConfig(seed=123)
    a = run(SimRun(net, config=config, master_seed=1))
    b = run(SimRun(net, config=config, master_seed=2))
    assert np.array_equal(a.trajectory.estimates[0], b.trajectory.estimates[0])
    assert np.array_equal(a.trajectory.final_estimates(), b.trajectory.final_estimates())


def test_messages_travel_on_edges_only():
    net = mixed_demo_network()
    for protocol in ("simultaneous", "sequential"):
        res = run(SimRun(net, protocol=protocol, master_seed=7))
        assert res.messages
        for msg in res.messages:
            assert net.is_edge(msg.sender, msg.receiver)
            assert msg.payload in ("measurements", "estimate")


def test_phase_one_messages_cover_both_directions():
    net = fig4_network()
    res = run(SimRun(net, master_seed=0, config=SolverConfig(convergence_eps=1e6)))
    phase1 = [m for m in res.messages if m.round == 0]
    assert all(m.payload == "measurements" for m in phase1)
    assert len(phase1) == 2 * len(net.edges)
    directed = {(m.sender, m.receiver) for m in phase1}
    for i, j in net.edges:
        assert (i, j) in directed and (j, i) in directed
    # eps so loose the solver stops after one iteration: exactly one round of
    # estimate traffic, one message per free node per neighbor
    assert res.rounds == 1
    per_round = sum(len(net.neighbors(i)) for i in net.free_ids)
    assert len(res.messages) == len(phase1) + per_round


def test_noise_perturbs_displacement_constraints_only():
    net = fig4_network()
    clean = run(SimRun(net, master_seed=3))
    noisy = run(SimRun(net, noise=NoiseSpec(relpos=1e-3), master_seed=3))
    # the anchor triangle identities never see measurement noise
    assert anchor_angle_constraints(net) == anchor_angle_constraints(net)
    changed = 0
    for a, b in zip(clean.constraints, noisy.constraints):
        assert (a.center, a.neighbors, a.source) == (b.center, b.neighbors, b.source)
        if np.abs(a.coeffs - b.coeffs).max() > 0:
            changed += 1
    assert changed > 0


def test_clean_runs_recover_truth():
    for net in (fig4_network(), mixed_demo_network()):
        sim = run(SimRun(net, master_seed=11))
        assert sim.final_error() < 1e-6 * net.diameter()
        seq = run(SimRun(net, protocol="sequential", master_seed=11))
        assert seq.final_error() < 1e-8 * net.diameter()
        assert np.allclose(
            sim.final_positions()[: net.n_anchors], net.anchor_positions()
        )


def test_simultaneous_settles_at_perturbed_fixed_point():
    net = fig4_network()
    noise = NoiseSpec(relpos=1e-3, seed=5)
    res = run(
        SimRun(net, noise=noise, master_seed=5, config=SolverConfig(convergence_eps=1e-12))
    )
    m_ff, m_fa = _scalar_blocks(res.constraints, net.n, net.n_anchors)
    fixed = np.linalg.solve(m_ff, -(m_fa @ net.anchor_positions()))
    assert np.abs(res.trajectory.final_estimates() - fixed).max() < 1e-6
    # small sensor noise moves the solution, but not far
    assert 0 < res.final_error() < 0.1 * net.diameter()


def test_fixed_offsets_flow_through_simulation():
    net = mixed_demo_network()
    res = run(
        SimRun(net, noise=mixed_demo_offsets(), master_seed=8,
               config=SolverConfig(convergence_eps=1e-12)),
    )
    c4 = next(c for c in res.constraints if 4 in c.support() and c.center == 4)
    clean = run(SimRun(net, master_seed=8))
    c4_clean = next(c for c in clean.constraints if c.center == 4)
    assert np.abs(c4.coeffs - c4_clean.coeffs).max() > 1e-3
    m_ff, m_fa = _scalar_blocks(res.constraints, net.n, net.n_anchors)
    fixed = np.linalg.solve(m_ff, -(m_fa @ net.anchor_positions()))
    assert np.abs(res.trajectory.final_estimates() - fixed).max() < 1e-6 * net.diameter()


def test_structural_check_and_force():
    net = fig4_network(dangling_anchor=True)
    with pytest.raises(RealizabilityError):
        run(SimRun(net, master_seed=1))
    res = run(SimRun(net, master_seed=1, force=True))
    assert res.final_error() < 1e-6 * net.diameter()


def test_coverage_error_in_simultaneous_mode():
    # free node with only three mutually adjacent neighbors: constraint
    # construction fails, which simultaneous mode cannot tolerate
    pos = [(0.0, 0.0, 0.0), (4.0, 0.0, 0.0), (0.0, 4.0, 0.0), (0.0, 0.0, 4.0), (1.0, 1.0, 1.0)]
    nodes = [NodeSpec(i, p, "anchor" if i < 4 else "free", "relpos") for i, p in enumerate(pos)]
    edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (4, 0), (4, 1), (4, 2)]
    net = Network(nodes, edges)
    with pytest.raises(CoverageError):
        run(SimRun(net, master_seed=0, force=True))
    seq = run(SimRun(net, protocol="sequential", master_seed=0, force=True))
    assert seq.sequential.unlocalized == [4]


def test_log_truncation_cap():
    net = fig4_network()
    res = run(SimRun(net, master_seed=2, max_log_entries=10))
    assert res.log_truncated
    assert len(res.messages) == 10
    assert res.final_error() < 1e-6 * net.diameter()  # solving is unaffected


def test_log_disabled():
    net = fig4_network()
    res = run(SimRun(net, master_seed=2, log_messages=False))
    assert res.messages == [] and not res.log_truncated


def test_sequential_message_availability():
    net = mixed_demo_network()
    res = run(SimRun(net, protocol="sequential", master_seed=4))
    seq = res.sequential
    assert seq.round_localized == {4: 1, 6: 1, 7: 1, 8: 1, 9: 1, 5: 2}
    senders_to = lambda i: {m.sender for m in res.messages if m.receiver == i and m.round > 0}
    # node 4 fixed first: only its anchor neighbors were broadcasting yet
    assert senders_to(4) == {0, 1}
    # node 5 waited a round: every neighbor had a position by then
    assert senders_to(5) == {0, 1, 4, 6, 7}
    # node 9 heard anchors 2, 3 plus same-round lower ids 6, 8
    assert senders_to(9) == {2, 3, 6, 8}
    phase1 = sum(1 for m in res.messages if m.round == 0)
    assert phase1 == 2 * len(net.edges)
    assert len(res.messages) == phase1 + 26


def test_summary_contents():
    net = fig4_network()
    sim = run(SimRun(net, master_seed=6))
    s = sim.summary()
    assert s["protocol"] == "simultaneous"
    assert s["constraints_built"] == net.n_free
    assert s["uncovered"] == []
    assert s["final_error"] == pytest.approx(sim.final_error())
    assert s["solver"]["converged_at"] == sim.trajectory.converged_at
    seq = run(SimRun(net, protocol="sequential", master_seed=6)).summary()
    assert seq["order"] == [4, 5, 6]
    assert seq["unlocalized"] == []

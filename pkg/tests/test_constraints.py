"""Constraint construction: angle identities, ratio chaining, displacement rays."""

import numpy as np
import pytest

from mixloc.constraints import (
    AngleConstraint,
    DisplacementConstraint,
    RatioMatrix,
    anchor_angle_constraints,
    build_displacement_constraint,
    build_network_constraints,
    build_ratio_matrix,
    colinear_constraint,
    constraint_localizes,
    constraints_from_json,
    constraints_to_json,
    displacement_from_distance_matrix,
    triangle_ratios,
)
from mixloc.errors import InsufficientMeasurementsError
from mixloc.geometry import normalize_coefficients, squared_distance_matrix
from mixloc.network import (
    MeasurementSet,
    Network,
    NodeSpec,
    random_rotation,
    synthesize_all,
)
from mixloc.scenarios import fig4_network, mixed_demo_network


def assert_ray(coeffs, expected, tol=1e-9):
    """Compare constraint coefficients up to the stored normalization."""
    want = normalize_coefficients(np.asarray(expected, dtype=float))
    assert np.abs(np.asarray(coeffs) - want).max() < tol


def clique_network(positions, sensors, n_anchors=None):
    n = len(positions)
    if n_anchors is None:
        n_anchors = n
    nodes = [
        NodeSpec(i, p, "anchor" if i < n_anchors else "free", s)
        for i, (p, s) in enumerate(zip(positions, sensors))
    ]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return Network(nodes, edges)


# --- angle constraints ---------------------------------------------------------

def test_angle_weights_equilateral():
    pos = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.5, np.sqrt(3) / 2, 0.0)]
    net = clique_network(pos, ["relpos"] * 3)
    (c,) = anchor_angle_constraints(net)
    assert c.nodes == (0, 1, 2)
    # every interior dot product is 1/2, so each pair is (2, -2)
    assert np.allclose([c.w_ik, c.w_ij, c.w_jk], 2.0)
    assert np.allclose([c.w_ki, c.w_ji, c.w_kj], -2.0)


def test_angle_weights_right_angle_branch():
    pos = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
    net = clique_network(pos, ["relpos"] * 3)
    (c,) = anchor_angle_constraints(net)
    # the right angle at node 0 shows up in the (i, j) and (i, k) pairs as a
    # degenerate (1, 0) weight pair
    assert (c.w_ij, c.w_ji) == (1.0, 0.0)
    assert (c.w_ik, c.w_ki) == (1.0, 0.0)
    assert np.abs(c.residuals(np.asarray(pos))).max() < 1e-12


def test_angle_constraints_reject_coincident_anchors():
    pos = [(0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]
    net = clique_network(pos, ["relpos"] * 3)
    with pytest.raises(ValueError):
        anchor_angle_constraints(net)


def test_angle_constraints_skip_incomplete_triangles():
    pos = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
    nodes = [NodeSpec(i, p, "anchor", "relpos") for i, p in enumerate(pos)]
    net = Network(nodes, [(0, 1), (0, 2)])  # no 1-2 edge
    assert anchor_angle_constraints(net) == []


def test_angle_residuals_vanish_for_congruent_placements():
    net = fig4_network()
    cons = anchor_angle_constraints(net)
    assert len(cons) == 4  # every anchor triple of the tetrahedron
    p = net.positions()
    rng = np.random.default_rng(0)
    rot = random_rotation(rng)
    placements = [p, p @ rot.T + np.array([3.0, -7.0, 11.0]), 2.5 * p]
    for q in placements:
        for c in cons:
            assert np.abs(c.residuals(q)).max() < 1e-9
            assert c.primary_value(q) == pytest.approx(c.residuals(q)[0])


def test_angle_residuals_nonzero_off_shape():
    net = fig4_network()
    cons = anchor_angle_constraints(net)
    p = net.positions().copy()
    p[1] += np.array([5.0, 3.0, -2.0])  # break the anchor triangle shapes
    assert max(np.abs(c.residuals(p)).max() for c in cons) > 1e-3


# --- displacement constraint basics ---------------------------------------------

def test_displacement_constraint_normalization_and_lookup():
    c = DisplacementConstraint(7, (1, 2, 3), [-2.0, 4.0, 0.0], source="relpos")
    assert abs(np.linalg.norm(c.coeffs) - 1.0) < 1e-12
    assert c.coeffs[0] > 0  # sign convention
    assert c.coefficient_of(1) == pytest.approx(c.coeffs[0])
    assert c.coefficient_of(7) == pytest.approx(-c.coeff_sum)
    assert c.coefficient_of(99) == 0.0
    assert c.support() == (7, 1, 2, 3)


def test_displacement_constraint_validation():
    with pytest.raises(ValueError):
        DisplacementConstraint(0, (1,), [1.0], source="relpos")
    with pytest.raises(ValueError):
        DisplacementConstraint(0, (1, 1, 2), [1.0, 1.0, 1.0], source="relpos")
    with pytest.raises(ValueError):
        DisplacementConstraint(0, (0, 1, 2), [1.0, 1.0, 1.0], source="relpos")
    with pytest.raises(ValueError):
        DisplacementConstraint(0, (1, 2), [0.0, 0.0], source="relpos")


def test_residual_accepts_arrays_and_mappings():
    c = DisplacementConstraint(0, (1, 2), [1.0, -1.0], source="relpos")
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    by_map = c.residual({0: pts[0], 1: pts[1], 2: pts[2]})
    assert np.allclose(c.residual(pts), by_map)


# --- triangle ratio resolution ----------------------------------------------------

def test_triangle_ratios_from_two_angles():
    meas_a = MeasurementSet(0, "angle", {(1, 2): np.pi / 2})
    meas_b = MeasurementSet(1, "angle", {(0, 2): np.pi / 3})
    meas_c = MeasurementSet(2, "angle", {})
    r_ac, r_bc = triangle_ratios(meas_a, meas_b, meas_c)
    assert r_ac == pytest.approx(np.sqrt(3.0))
    assert r_bc == pytest.approx(2.0)


def test_triangle_ratios_from_length_and_ratio_chain():
    meas_a = MeasurementSet(0, "distance", {1: 2.0, 2: 3.0})
    meas_b = MeasurementSet(1, "distance", {})
    meas_c = MeasurementSet(2, "ratio", {(0, 1): 0.75})  # d_c0 / d_c1
    r_ac, r_bc = triangle_ratios(meas_a, meas_b, meas_c)
    assert r_ac == pytest.approx(1.5)
    assert r_bc == pytest.approx(2.0)


def test_triangle_ratios_from_bearings_match_truth():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pos = rng.uniform(-10, 10, (3, 3))
        net = clique_network(pos, ["bearing", "bearing", "angle"])
        ms = synthesize_all(net)
        r_ac, r_bc = triangle_ratios(ms[0], ms[1], ms[2])
        d = np.sqrt(squared_distance_matrix(pos))
        assert r_ac == pytest.approx(d[0, 2] / d[0, 1], abs=1e-9)
        assert r_bc == pytest.approx(d[1, 2] / d[0, 1], abs=1e-9)


def test_triangle_ratios_insufficient_data():
    meas_a = MeasurementSet(0, "distance", {1: 1.0})
    meas_b = MeasurementSet(1, "distance", {})
    meas_c = MeasurementSet(2, "distance", {})
    with pytest.raises(InsufficientMeasurementsError):
        triangle_ratios(meas_a, meas_b, meas_c)


# --- ratio matrices -----------------------------------------------------------------

def test_ratio_matrix_all_distance_is_exact():
    rng = np.random.default_rng(2)
    pos = rng.uniform(-10, 10, (5, 3))
    net = clique_network(pos, ["distance"] * 5)
    ms = synthesize_all(net)
    ratio = build_ratio_matrix(ms, (0, 1, 2, 3, 4))
    d2 = squared_distance_matrix(pos)
    want = d2 / d2[0, 1]
    assert ratio.entries[0, 1] == pytest.approx(1.0)
    assert np.abs(ratio.entries - want).max() < 1e-9 * want.max()
    ratio.validate()


def test_ratio_matrix_all_bearing():
    rng = np.random.default_rng(3)
    pos = rng.uniform(-10, 10, (5, 3))
    net = clique_network(pos, ["bearing"] * 5)
    ms = synthesize_all(net)
    ratio = build_ratio_matrix(ms, (0, 1, 2, 3, 4))
    d2 = squared_distance_matrix(pos)
    want = d2 / d2[0, 1]
    assert np.abs(ratio.entries - want).max() < 1e-8 * want.max()


def test_ratio_matrix_all_ratio():
    rng = np.random.default_rng(4)
    pos = rng.uniform(-10, 10, (5, 3))
    net = clique_network(pos, ["ratio"] * 5)
    ms = synthesize_all(net)
    ratio = build_ratio_matrix(ms, (0, 1, 2, 3, 4))
    d2 = squared_distance_matrix(pos)
    want = d2 / d2[0, 1]
    assert np.abs(ratio.entries - want).max() < 1e-8 * want.max()
    ratio.validate()


def test_ratio_matrix_validate_rejects_malformed():
    good = np.array([[0.0, 1.0], [1.0, 0.0]])
    RatioMatrix((0, 1), good).validate()
    with pytest.raises(ValueError):
        RatioMatrix((0, 1), np.array([[0.0, 2.0], [2.0, 0.0]])).validate()
    bad_diag = np.array([[0.5, 1.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        RatioMatrix((0, 1), bad_diag).validate()
    asym = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.5, 3.0, 0.0]])
    with pytest.raises(ValueError):
        RatioMatrix((0, 1, 2), asym).validate()


def test_ratio_matrix_requires_all_nodes_measured():
    rng = np.random.default_rng(6)
    pos = rng.uniform(-10, 10, (5, 3))
    net = clique_network(pos, ["distance"] * 5)
    ms = synthesize_all(net)
    del ms[3]
    with pytest.raises(InsufficientMeasurementsError):
        build_ratio_matrix(ms, (0, 1, 2, 3, 4))


# --- distance matrix -> displacement constraint ---------------------------------------

def test_distance_matrix_generic_case():
    rng = np.random.default_rng(7)
    pos = rng.uniform(-10, 10, (5, 3))
    d2 = squared_distance_matrix(pos)
    c = displacement_from_distance_matrix(d2, ids=(10, 11, 12, 13, 14))
    assert c.branch == "3d"
    placed = {10 + k: pos[k] for k in range(5)}
    scale = float(np.sqrt(d2.max()))
    assert np.linalg.norm(c.residual(placed)) < 1e-8 * scale
    assert constraint_localizes(c, 10)
    # a ratio matrix gives identical coefficients
    c2 = displacement_from_distance_matrix(d2 / d2[0, 1], ids=(10, 11, 12, 13, 14))
    assert np.abs(c.coeffs - c2.coeffs).max() < 1e-9


def test_distance_matrix_planar_case():
    refs = np.array(
        [[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [3.0, 3.0, 0.0]]
    )
    center = np.array([1.0, 1.0, 5.0])
    pts = np.vstack([center, refs])
    c = displacement_from_distance_matrix(squared_distance_matrix(pts), ids=(0, 1, 2, 3, 4))
    assert c.branch == "planar"
    assert abs(c.coeff_sum) < 1e-9  # cannot pin the center
    assert not constraint_localizes(c, 0)
    placed = {k: pts[k] for k in range(5)}
    assert np.linalg.norm(c.residual(placed)) < 1e-8 * 5.0


def test_distance_matrix_colinear_case():
    refs = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0], [1.0, 7.0, 2.0]]
    )
    center = np.array([0.5, 2.0, 1.0])
    pts = np.vstack([center, refs])
    c = displacement_from_distance_matrix(squared_distance_matrix(pts), ids=(0, 1, 2, 3, 4))
    assert c.branch == "colinear"
    assert c.coeffs[3] == 0.0  # the off-line reference drops out
    assert abs(c.coeff_sum) < 1e-9
    placed = {k: pts[k] for k in range(5)}
    assert np.linalg.norm(c.residual(placed)) < 1e-8 * 5.0


def test_distance_matrix_requires_ids_for_raw_input():
    d2 = squared_distance_matrix(np.random.default_rng(0).uniform(0, 1, (5, 3)))
    with pytest.raises(ValueError):
        displacement_from_distance_matrix(d2)


def test_colinear_constraint_direct():
    # points at x = 0, 1, 3 plus an off-line fourth reference
    c = colinear_constraint(1.0, 2.0, 3.0, ids=(9, 1, 2, 3, 4))
    assert c.center == 9 and c.neighbors == (1, 2, 3, 4)
    assert c.coeffs[3] == 0.0
    placed = {
        9: np.array([5.0, 5.0, 5.0]),
        1: np.array([0.0, 0.0, 0.0]),
        2: np.array([1.0, 0.0, 0.0]),
        3: np.array([3.0, 0.0, 0.0]),
        4: np.array([2.0, 9.0, 4.0]),
    }
    assert np.linalg.norm(c.residual(placed)) < 1e-12


# --- per-node dispatch -----------------------------------------------------------------

def test_dispatch_center_measures_itself():
    net = fig4_network()
    ms = synthesize_all(net)
    c = build_displacement_constraint(net, 4, (0, 1, 2, 3), ms)
    assert c.source == "relpos" and c.center == 4 and c.neighbors == (0, 1, 2, 3)
    assert_ray(c.coeffs, [0.0, 1.0, -2.0 / 3.0, -1.0])
    assert np.linalg.norm(c.residual(net.positions())) < 1e-9


def test_dispatch_fig4_remaining_nodes():
    net = fig4_network()
    ms = synthesize_all(net)
    c5 = build_displacement_constraint(net, 5, (0, 2, 3, 4), ms)
    assert_ray(c5.coeffs, [0.0, 1.0, 0.0, -5.0 / 2.0])
    c6 = build_displacement_constraint(net, 6, (0, 3, 4, 5), ms)
    assert_ray(c6.coeffs, [3.0 / 4.0, -3.0 / 8.0, -7.0 / 8.0, 1.0])


def test_dispatch_recenters_at_measuring_neighbor():
    net = mixed_demo_network()
    ms = synthesize_all(net)
    # node 6 cannot measure displacements; anchor 0 measures the whole group
    c = build_displacement_constraint(net, 6, (0, 1, 2, 3), ms)
    assert c.source == "neighbor-relpos"
    assert c.center == 0 and c.neighbors == (6, 1, 2, 3)
    assert_ray(c.coeffs, [2.0, -1.0, 0.0, -1.0])
    assert np.linalg.norm(c.residual(net.positions())) < 1e-9


def test_dispatch_ratio_route():
    rng = np.random.default_rng(8)
    pos = rng.uniform(-10, 10, (5, 3))
    net = clique_network(pos, ["distance", "ratio", "angle", "distance", "bearing"])
    ms = synthesize_all(net)
    c = build_displacement_constraint(net, 0, (1, 2, 3, 4), ms)
    assert c.source == "ratio-matrix" and c.branch == "3d"
    assert np.linalg.norm(c.residual(pos)) < 1e-7 * 20.0


def test_dispatch_validates_arguments():
    net = fig4_network()
    ms = synthesize_all(net)
    with pytest.raises(ValueError):
        build_displacement_constraint(net, 4, (0, 1, 2), ms)
    with pytest.raises(ValueError):
        build_displacement_constraint(net, 5, (0, 1, 2, 3), ms)  # 1 not adjacent to 5
    with pytest.raises(InsufficientMeasurementsError):
        build_displacement_constraint(net, 4, (0, 1, 2, 3), {})


def test_dispatch_frame_invariance():
    base = mixed_demo_network()
    rng = np.random.default_rng(9)
    rotated = Network(
        [
            NodeSpec(n.id, n.position, n.role, n.sensor, rotation=random_rotation(rng))
            for n in base.nodes
        ],
        base.edges,
    )
    a, _ = build_network_constraints(base, synthesize_all(base))
    b, _ = build_network_constraints(rotated, synthesize_all(rotated))
    assert len(a) == len(b)
    for ca, cb in zip(a, b):
        assert (ca.center, ca.neighbors, ca.source) == (cb.center, cb.neighbors, cb.source)
        assert np.abs(ca.coeffs - cb.coeffs).max() < 1e-9


def test_dispatch_scale_invariance():
    base = mixed_demo_network()
    scaled = Network(
        [
            NodeSpec(n.id, 3.0 * n.position, n.role, n.sensor, rotation=n.rotation)
            for n in base.nodes
        ],
        base.edges,
    )
    a, _ = build_network_constraints(base, synthesize_all(base))
    b, _ = build_network_constraints(scaled, synthesize_all(scaled))
    for ca, cb in zip(a, b):
        assert np.abs(ca.coeffs - cb.coeffs).max() < 1e-9


# --- whole-network construction -----------------------------------------------------

def test_network_constraints_mixed_demo():
    net = mixed_demo_network()
    cons, failures = build_network_constraints(net, synthesize_all(net))
    assert failures == {}
    assert len(cons) == net.n_free
    expected = {
        4: (4, (0, 1, 5, 6), [1.0, 1.0, 0.0, 0.0], "relpos"),
        5: (0, (5, 1, 6, 7), [1.0, 0.0, 2.0, -2.0], "neighbor-relpos"),
        6: (0, (6, 1, 2, 3), [2.0, -1.0, 0.0, -1.0], "neighbor-relpos"),
        7: (0, (7, 1, 2, 3), [4.0, -4.0, 1.0, -3.0], "neighbor-relpos"),
        8: (0, (8, 1, 2, 3), [20.0, -4.0, -1.0, -12.0], "neighbor-relpos"),
        9: (9, (2, 3, 6, 8), [7.0, -1.0, -1.0, 10.0], "relpos"),
    }
    for node, c in zip(sorted(net.free_ids), cons):
        center, nbrs, ray, source = expected[node]
        assert c.center == center and c.neighbors == nbrs and c.source == source
        assert_ray(c.coeffs, ray)
        assert constraint_localizes(c, node)
        assert np.linalg.norm(c.residual(net.positions())) < 1e-9


def test_network_constraints_skip_nonviable_group():
    net = mixed_demo_network()
    ms = synthesize_all(net)
    # the lexicographically first clique around node 5 yields a relation with
    # no weight on node 5 itself, so the scan must move past it
    c = build_displacement_constraint(net, 5, (0, 1, 4, 6), ms)
    assert not constraint_localizes(c, 5)
    cons, failures = build_network_constraints(net, ms)
    winner = next(c for c in cons if constraint_localizes(c, 5) and 5 in c.support())
    assert set(winner.support()) == {0, 5, 1, 6, 7}


def test_network_constraints_report_failures():
    net = fig4_network()
    cons, failures = build_network_constraints(net, {})
    assert cons == []
    assert set(failures) == {4, 5, 6}
    for reasons in failures.values():
        assert reasons and all(isinstance(r, str) for r in reasons)


def test_network_constraints_no_clique_failure():
    pos = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (0.3, 0.3, 0.3)]
    nodes = [NodeSpec(i, p, "anchor" if i < 4 else "free", "relpos") for i, p in enumerate(pos)]
    edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (4, 0), (4, 1), (4, 2)]
    net = Network(nodes, edges)
    cons, failures = build_network_constraints(net, synthesize_all(net))
    assert failures == {4: ["no mutually adjacent neighbor quadruple"]}


# --- serialization -------------------------------------------------------------------

def test_constraints_json_round_trip():
    net = mixed_demo_network()
    cons, _ = build_network_constraints(net, synthesize_all(net))
    back = constraints_from_json(constraints_to_json(cons))
    assert len(back) == len(cons)
    for a, b in zip(cons, back):
        assert a.center == b.center and a.neighbors == b.neighbors
        assert a.source == b.source and a.branch == b.branch
        assert np.abs(a.coeffs - b.coeffs).max() < 1e-15

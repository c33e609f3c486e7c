"""Self-checks that rebuild the worked examples and compare known values.

Each check returns (name, passed, detail). The expected numbers are the
known closed-form values for the two built-in fixtures; tolerances follow
the precision those values are stated in.
"""

from __future__ import annotations

import numpy as np

from .network import synthesize_all, synthesize_measurements
from .constraints import build_displacement_constraint, build_network_constraints
from .rigidity import information_matrix, build_rigidity_matrix
from .scenarios import fig4_network, mixed_demo_network, mixed_demo_offsets
from .solver import direct_solve
from .constraints import anchor_angle_constraints

EXPECTED_FREE_POSITIONS = np.array(
    [[10.0, 20.0, 0.0], [10.0, 40.0, 0.0], [2.5, 30.0, 30.0]]
)

# coefficient rays of the three constraints, in free-node order, listed over
# each node's reference quadruple
EXPECTED_RAYS = {
    4: np.array([0.0, 1.0, -2.0 / 3.0, -1.0]),
    5: np.array([0.0, 1.0, 0.0, -5.0 / 2.0]),
    6: np.array([3.0 / 4.0, -3.0 / 8.0, -7.0 / 8.0, 1.0]),
}

# information-matrix blocks in the scaling convention the expected values are
# stated in: each scalar constraint row is divided by a pivot entry
# (rows of nodes 4 and 5 by their center coefficient, row of node 6 by its
# coefficient on node 5)
PIVOT_COLUMNS = {4: 4, 5: 5, 6: 5}
EXPECTED_FREE_BLOCK = np.array(
    [
        [1413.0 / 311.0, -61.0 / 24.0, 7.0 / 16.0],
        [-61.0 / 24.0, 2.0, -1.0 / 2.0],
        [7.0 / 16.0, -1.0 / 2.0, 1.0 / 4.0],
    ]
)
EXPECTED_CROSS_BLOCK = np.array(
    [
        [-21.0 / 32.0, 3.0 / 2.0, -19.0 / 9.0, -75.0 / 64.0],
        [3.0 / 4.0, 0.0, 2.0 / 3.0, -3.0 / 8.0],
        [-3.0 / 8.0, 0.0, 0.0, 3.0 / 16.0],
    ]
)

# perturbed-measurement coefficients for node 4 of the ten-node demo,
# normalized so the coefficient on neighbor 6 equals -1; stated to about
# four significant digits, hence the 1e-2 relative tolerance
EXPECTED_PERTURBED = np.array([6201.0 / 61.0, 38449.0 / 380.0, -1103.0 / 551.0])


def _ray_mismatch(got: np.ndarray, expected: np.ndarray) -> float:
    """Distance between two coefficient rays (scale and sign free)."""
    a = np.asarray(got, dtype=float)
    b = np.asarray(expected, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(min(np.abs(a - b).max(), np.abs(a + b).max()))


def check_example_solve() -> tuple[str, bool, str]:
    """Seven-node fixture: forced constraints and the closed-form solve."""
    net = fig4_network()
    constraints, failures = build_network_constraints(net, synthesize_all(net))
    if failures:
        return ("example-solve", False, f"uncovered nodes: {sorted(failures)}")
    worst_ray = 0.0
    for c in constraints:
        worst_ray = max(worst_ray, _ray_mismatch(c.coeffs, EXPECTED_RAYS[c.center]))
    rigidity = build_rigidity_matrix(
        list(anchor_angle_constraints(net)) + list(constraints), net.positions()
    )
    info = information_matrix(rigidity, net.n_anchors)
    p_f = direct_solve(info.m_ff, info.m_fa, net.anchor_positions())
    worst_pos = float(np.abs(p_f - EXPECTED_FREE_POSITIONS).max())
    ok = worst_ray < 1e-9 and worst_pos < 1e-9
    return (
        "example-solve",
        ok,
        f"max constraint deviation {worst_ray:.2e}, max position deviation {worst_pos:.2e}",
    )


def _pivot_scaled_rows(net, constraints) -> np.ndarray:
    from .rigidity import scalar_displacement_row

    rows = []
    for c in constraints:
        row = scalar_displacement_row(c, net.n)
        rows.append(row / row[PIVOT_COLUMNS[c.center]])
    return np.array(rows)


def check_information_blocks() -> tuple[str, bool, str]:
    """Seven-node fixture: scalar M_ff and M_fa against the known blocks."""
    net = fig4_network()
    constraints, failures = build_network_constraints(net, synthesize_all(net))
    if failures:
        return ("information-blocks", False, f"uncovered nodes: {sorted(failures)}")
    g = _pivot_scaled_rows(net, constraints)
    g_a, g_f = g[:, : net.n_anchors], g[:, net.n_anchors :]
    m_ff = g_f.T @ g_f
    m_fa = g_f.T @ g_a
    diff_ff = np.abs(m_ff - EXPECTED_FREE_BLOCK)
    # the (0,0) entry of the expected block is stated at lower precision
    ok = (
        diff_ff[0, 0] <= 1e-4 * abs(EXPECTED_FREE_BLOCK[0, 0])
        and float(np.delete(diff_ff.ravel(), 0).max()) < 1e-9
        and float(np.abs(m_fa - EXPECTED_CROSS_BLOCK).max()) < 1e-9
    )
    detail = (
        f"free-block corner off by {diff_ff[0, 0]:.2e}, "
        f"largest other deviation {max(float(np.delete(diff_ff.ravel(), 0).max()), float(np.abs(m_fa - EXPECTED_CROSS_BLOCK).max())):.2e}"
    )
    return ("information-blocks", ok, detail)


def check_perturbed_constraint() -> tuple[str, bool, str]:
    """Ten-node demo: node 4's constraint under the fixed offsets."""
    net = mixed_demo_network()
    noise = mixed_demo_offsets()
    measurements = {i: synthesize_measurements(net, i, noise) for i in range(net.n)}
    c = build_displacement_constraint(net, 4, (0, 1, 5, 6), measurements)
    coeffs = dict(zip(c.neighbors, c.coeffs))
    scale = -coeffs[6]
    got = np.array([coeffs[0], coeffs[1], coeffs[5]]) / scale
    rel = float(np.abs((got - EXPECTED_PERTURBED) / EXPECTED_PERTURBED).max())
    return (
        "perturbed-constraint",
        rel < 1e-2,
        f"worst relative deviation {rel:.2e}",
    )


def run_all() -> list[tuple[str, bool, str]]:
    return [
        check_example_solve(),
        check_information_blocks(),
        check_perturbed_constraint(),
    ]

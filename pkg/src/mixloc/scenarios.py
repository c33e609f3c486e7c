"""Built-in example networks and a random network generator.

Two hand-built fixtures exercise the full pipeline with known closed-form
results, and ``generate_random`` produces families of solvable networks for
stress tests. All fixtures use four anchors forming a complete, non-coplanar
tetrahedron so that anchor angle constraints pin the anchor shape.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .errors import RealizabilityError
from .network import (
    ANGLE,
    BEARING,
    DISTANCE,
    RATIO,
    RELPOS,
    SENSOR_CLASSES,
    Network,
    NodeSpec,
    NoiseSpec,
    random_rotation,
)

SENSOR_MIXES = (
    "all-relpos",
    "all-distance",
    "all-bearing",
    "all-angle",
    "all-ratio",
    "mixed",
)

# z-rotation by ~36.87 deg (3-4-5 triangle), used to give some fixture nodes a
# nontrivial local frame with exactly representable entries
_TILT = np.array([[0.6, -0.8, 0.0], [0.8, 0.6, 0.0], [0.0, 0.0, 1.0]])


def fig4_network(dangling_anchor: bool = False) -> Network:
    """Seven-node example with three relative-position free nodes.

    Anchors sit at a non-coplanar tetrahedron; each free node sees exactly
    one mutually adjacent quadruple, so the constraint each one builds is
    forced. With ``dangling_anchor`` a fifth anchor is inserted with a single
    edge, producing a network that is localizable but not rigid (the extra
    anchor participates in no constraint at all).
    """
    anchors = [
        NodeSpec(0, (0.0, 0.0, 20.0), "anchor", RELPOS, rotation=_TILT),
        NodeSpec(1, (0.0, 0.0, 0.0), "anchor", RATIO),
        NodeSpec(2, (10.0, -10.0, 0.0), "anchor", BEARING),
        NodeSpec(3, (0.0, 20.0, 0.0), "anchor", DISTANCE),
    ]
    free_positions = [
        (10.0, 20.0, 0.0),
        (10.0, 40.0, 0.0),
        (2.5, 30.0, 30.0),
    ]
    anchor_edges = list(combinations(range(4), 2))
    free_edges = [
        (4, 0), (4, 1), (4, 2), (4, 3),
        (5, 0), (5, 2), (5, 3), (5, 4),
        (6, 0), (6, 3), (6, 4), (6, 5),
    ]
    if not dangling_anchor:
        nodes = anchors + [
            NodeSpec(4 + k, pos, "free", RELPOS) for k, pos in enumerate(free_positions)
        ]
        return Network(nodes, anchor_edges + free_edges)
    # insert anchor id 4 with one edge; free ids shift up by one
    nodes = anchors + [NodeSpec(4, (-10.0, 5.0, 5.0), "anchor", DISTANCE)]
    nodes += [NodeSpec(5 + k, pos, "free", RELPOS) for k, pos in enumerate(free_positions)]
    shift = lambda i: i + 1 if i >= 4 else i
    edges = anchor_edges + [(0, 4)] + [(shift(a), shift(b)) for a, b in free_edges]
    return Network(nodes, edges)


def mixed_demo_network() -> Network:
    """Ten-node network with every sensor class represented.

    Node 4 measures relative positions of neighbors 0, 1, 5, 6 in the global
    frame; ``mixed_demo_offsets`` perturbs exactly those four measurements so
    the perturbed null-space coefficients can be checked against known
    values. The free part of the constraint system is structurally
    triangular, so the network is localizable by construction.
    """
    nodes = [
        NodeSpec(0, (-200.0, -200.0, 0.0), "anchor", RELPOS, rotation=_TILT),
        NodeSpec(1, (200.0, -200.0, 0.0), "anchor", RATIO),
        NodeSpec(2, (200.0, 200.0, 0.0), "anchor", BEARING),
        NodeSpec(3, (-200.0, 200.0, 200.0), "anchor", DISTANCE),
        NodeSpec(4, (0.0, -200.0, 0.0), "free", RELPOS),
        NodeSpec(5, (0.0, -200.0, 100.0), "free", ANGLE),
        NodeSpec(6, (0.0, 0.0, 100.0), "free", DISTANCE),
        NodeSpec(7, (100.0, 0.0, 150.0), "free", BEARING),
        NodeSpec(8, (-100.0, 60.0, 120.0), "free", RATIO),
        NodeSpec(9, (40.0, 120.0, 60.0), "free", RELPOS, rotation=_TILT.T),
    ]
    edges = [
        (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
        (0, 4), (1, 4), (4, 5), (4, 6),
        (0, 5), (0, 6), (1, 5), (1, 6), (5, 6), (2, 6), (3, 6),
        (0, 7), (1, 7), (2, 7), (3, 7),
        (0, 8), (1, 8), (2, 8), (3, 8),
        (2, 9), (3, 9), (6, 9), (8, 9),
        (5, 7), (6, 7), (6, 8),
    ]
    return Network(nodes, edges)


def mixed_demo_offsets() -> NoiseSpec:
    """Fixed perturbations for node 4's four relative-position measurements."""
    offsets = {
        (4, 0): (-5.0, -5.0, -5.0),
        (4, 1): (6.0, 7.0, 8.0),
        (4, 5): (-3.0, -4.0, -4.0),
        (4, 6): (10.0, 8.0, 9.0),
    }
    return NoiseSpec(offsets=offsets)


def _non_coplanar(points: np.ndarray, scale: float, tol: float = 0.02) -> bool:
    # a weakly non-coplanar reference quadruple gives the attached node a
    # weak pin coefficient, so the gate is deliberately strict
    diffs = points[1:] - points[0]
    return abs(np.linalg.det(diffs)) > tol * scale**3


def _colinear_triple(points: np.ndarray, scale: float, tol: float = 1e-3) -> bool:
    cross = np.cross(points[1] - points[0], points[2] - points[0])
    return np.linalg.norm(cross) < tol * scale**2


def _sensor_for(mix: str, rng: np.random.Generator) -> str:
    if mix == "mixed":
        return str(rng.choice(SENSOR_CLASSES))
    return mix.removeprefix("all-")


def generate_random(
    n_anchors: int = 4,
    n_free: int = 5,
    sensor_mix: str = "mixed",
    seed=None,
    box_size: float = 100.0,
    max_attempts: int = 10_000,
) -> Network:
    """Sample a random solvable network.

    Anchors form a complete graph on non-coplanar positions. Each free node
    is attached to a reference quadruple of already placed nodes which is
    completed into a clique, so every free node owns at least one usable
    constraint and the assembled system is solvable by construction. Networks
    failing the structural checks or yielding a singular free block are
    rejected and resampled; after ``max_attempts`` rejections a
    RealizabilityError is raised.
    """
    if sensor_mix not in SENSOR_MIXES:
        raise ValueError(f"unknown sensor mix {sensor_mix!r}")
    if n_anchors < 3:
        raise ValueError("need at least three anchors")
    if n_free < 1:
        raise ValueError("need at least one free node")
    if n_anchors < 4:
        raise RealizabilityError(
            "random generation needs four anchors to seed a mutually adjacent quadruple"
        )
    from .constraints import build_network_constraints, constraint_localizes
    from .network import synthesize_all, validate_assumptions
    from .rigidity import build_rigidity_matrix, check_localizable, information_matrix

    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        net = _sample_candidate(n_anchors, n_free, sensor_mix, rng, box_size)
        if net is None or validate_assumptions(net):
            continue
        constraints, _ = build_network_constraints(net, synthesize_all(net))
        pinned = {
            i for c in constraints for i in net.free_ids if constraint_localizes(c, i)
        }
        if pinned != set(net.free_ids):
            continue
        rigidity = build_rigidity_matrix(constraints, net.positions())
        info = information_matrix(rigidity, net.n_anchors)
        if not check_localizable(info.m_ff):
            continue
        eigvals = np.linalg.eigvalsh(info.m_ff)
        # ill conditioned free blocks stall the distributed solver, so cap
        # the spread instead of handing out technically solvable duds
        if eigvals[-1] / eigvals[0] > 1e4:
            continue
        return net
    raise RealizabilityError(
        f"no acceptable network after {max_attempts} attempts "
        f"(n_anchors={n_anchors}, n_free={n_free}, mix={sensor_mix!r})"
    )


def _sample_candidate(
    n_anchors: int, n_free: int, sensor_mix: str, rng: np.random.Generator, box: float
):
    n = n_anchors + n_free
    positions = np.empty((n, 3))
    # anchors: complete graph, no colinear triple, first four non-coplanar
    for _ in range(100):
        positions[:n_anchors] = rng.uniform(-box, box, (n_anchors, 3))
        if not _non_coplanar(positions[:4], box):
            continue
        bad = any(
            _colinear_triple(positions[list(t)], box)
            for t in combinations(range(n_anchors), 3)
        )
        if not bad:
            break
    else:
        return None

    edges = set(combinations(range(n_anchors), 2))
    for f in range(n_anchors, n):
        placed = f  # nodes 0..f-1 exist
        quad = None
        for _ in range(50):
            cand = tuple(sorted(rng.choice(placed, size=4, replace=False)))
            if _non_coplanar(positions[list(cand)], box):
                quad = cand
                break
        if quad is None:
            quad = (0, 1, 2, 3)
        edges.update(
            tuple(sorted(pair)) for pair in combinations(quad, 2)
        )
        edges.update((min(f, q), max(f, q)) for q in quad)
        for _ in range(50):
            pos = rng.uniform(-1.5 * box, 1.5 * box, 3)
            dists = np.linalg.norm(positions[:placed] - pos, axis=1)
            if dists.min() > 1e-2 * box:
                break
        positions[f] = pos

    nodes = []
    for i in range(n):
        sensor = _sensor_for(sensor_mix, rng)
        role = "anchor" if i < n_anchors else "free"
        nodes.append(
            NodeSpec(i, positions[i], role, sensor, rotation=random_rotation(rng))
        )
    return Network(nodes, sorted(edges))

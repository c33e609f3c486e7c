"""Constraint construction from anchors and local measurements.

Two constraint families tie the network together:

- Angle constraints among anchor triangles, built from known anchor positions
  alone. Each triangle carries three weighted dot-product identities.
- Displacement constraints: for a free node and four of its mutually adjacent
  neighbors, a coefficient vector mu with sum_e mu_e (p_e - p_center) = 0.

A displacement constraint is built along one of three routes, tried in this
order for the chosen center/neighbor group:

1. the center measures relative positions: null space of its measurement
   columns (source ``relpos``);
2. some neighbor measures relative positions: null space of that neighbor's
   columns, the constraint re-centered there (source ``neighbor-relpos``);
3. otherwise a ratio-of-distance matrix is assembled triangle by triangle
   from whatever distance, bearing, angle, and ratio measurements exist, and
   coefficients follow from barycentric coordinates (source ``ratio-matrix``)
   with a branch tag ``3d``, ``planar``, or ``colinear``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InsufficientMeasurementsError,
    RealizabilityError,
)
from .geometry import (
    barycentric_3d,
    barycentric_planar,
    cayley_menger_area_sq,
    cayley_menger_volume_sq,
    colinear_coefficients,
    normalize_coefficients,
    null_space_coefficients,
)
from .network import ANGLE, BEARING, DISTANCE, RATIO, RELPOS, MeasurementSet, Network

RATIO_MATRIX_SOURCE = "ratio-matrix"


# --- angle constraints ------------------------------------------------------

@dataclass(frozen=True)
class AngleConstraint:
    """Weighted dot-product identities of one triangle (i, j, k), i < j < k.

    Each identity pairs the interior dot products at two vertices:

    - ``w_ik * (e_ik . e_ij) + w_ki * (e_ki . e_kj) = 0``
    - ``w_ij * (e_ij . e_ik) + w_ji * (e_ji . e_jk) = 0``
    - ``w_jk * (e_jk . e_ji) + w_kj * (e_kj . e_ki) = 0``

    where e_ab = p_b - p_a. The weights encode the triangle's angles without
    exposing any frame: the identities hold for every congruent placement.
    """

    nodes: tuple[int, int, int]
    w_ik: float
    w_ki: float
    w_ij: float
    w_ji: float
    w_jk: float
    w_kj: float

    def residuals(self, positions) -> np.ndarray:
        """The three identity values at the given (n, 3) positions."""
        p = np.asarray(positions, dtype=float)
        i, j, k = self.nodes
        e = lambda a, b: p[b] - p[a]
        return np.array(
            [
                self.w_ik * (e(i, k) @ e(i, j)) + self.w_ki * (e(k, i) @ e(k, j)),
                self.w_ij * (e(i, j) @ e(i, k)) + self.w_ji * (e(j, i) @ e(j, k)),
                self.w_jk * (e(j, k) @ e(j, i)) + self.w_kj * (e(k, j) @ e(k, i)),
            ]
        )

    def primary_value(self, positions) -> float:
        """The first identity's value; the one the rigidity system stacks."""
        return float(self.residuals(positions)[0])


def _weight_pair(pa, pb, pc, zero_tol: float) -> tuple[float, float]:
    """Weights (w_ab, w_ba) with w_ab (e_ab . e_ac) + w_ba (e_ba . e_bc) = 0."""
    e_ab = pb - pa
    e_ac = pc - pa
    e_ba = pa - pb
    e_bc = pc - pb
    dot_a = float(e_ab @ e_ac)
    dot_b = float(e_ba @ e_bc)
    floor_a = zero_tol * np.linalg.norm(e_ab) * np.linalg.norm(e_ac)
    floor_b = zero_tol * np.linalg.norm(e_ba) * np.linalg.norm(e_bc)
    if abs(dot_a) <= floor_a:
        return 1.0, 0.0
    if abs(dot_b) <= floor_b:
        return 0.0, 1.0
    return 1.0 / dot_a, -1.0 / dot_b


def anchor_angle_constraints(net: Network, zero_tol: float = 1e-12) -> list[AngleConstraint]:
    """Angle constraints for every triangle in the anchor subgraph.

    Uses anchor positions only; no measurements are involved. Raises
    ValueError when two anchors of a triangle coincide.
    """
    p = net.positions()
    out = []
    for i, j, k in combinations(range(net.n_anchors), 3):
        if not (net.is_edge(i, j) and net.is_edge(i, k) and net.is_edge(j, k)):
            continue
        for a, b in ((i, j), (i, k), (j, k)):
            if np.linalg.norm(p[b] - p[a]) == 0.0:
                raise ValueError(f"anchors {a} and {b} coincide")
        w_ik, w_ki = _weight_pair(p[i], p[k], p[j], zero_tol)
        w_ij, w_ji = _weight_pair(p[i], p[j], p[k], zero_tol)
        w_jk, w_kj = _weight_pair(p[j], p[k], p[i], zero_tol)
        out.append(AngleConstraint((i, j, k), w_ik, w_ki, w_ij, w_ji, w_jk, w_kj))
    return out


# --- displacement constraints ----------------------------------------------

@dataclass(frozen=True)
class DisplacementConstraint:
    """Linear relation sum_e mu_e (p_e - p_center) = 0 over 2 to 4 neighbors.

    Coefficients are stored normalized: unit Euclidean norm with the first
    nonzero entry positive. ``source`` records the construction route and
    ``branch`` the geometric case taken on the ratio-matrix route.
    """

    center: int
    neighbors: tuple[int, ...]
    coeffs: np.ndarray
    source: str
    branch: str | None = None

    def __post_init__(self):
        nbrs = tuple(int(v) for v in self.neighbors)
        if not 2 <= len(nbrs) <= 4:
            raise ValueError("a displacement constraint spans 2 to 4 neighbors")
        if len(set(nbrs)) != len(nbrs) or self.center in nbrs:
            raise ValueError("constraint node ids must be distinct")
        coeffs = normalize_coefficients(np.asarray(self.coeffs, dtype=float))
        if coeffs.shape != (len(nbrs),):
            raise ValueError("one coefficient per neighbor required")
        coeffs.setflags(write=False)
        object.__setattr__(self, "neighbors", nbrs)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def coeff_sum(self) -> float:
        return float(self.coeffs.sum())

    def coefficient_of(self, node: int) -> float:
        """Signed coefficient of a node's column: -sum(mu) at the center."""
        if node == self.center:
            return -self.coeff_sum
        if node in self.neighbors:
            return float(self.coeffs[self.neighbors.index(node)])
        return 0.0

    def support(self) -> tuple[int, ...]:
        return (self.center, *self.neighbors)

    def residual(self, positions) -> np.ndarray:
        """sum_e mu_e (p_e - p_center) at the given positions.

        ``positions`` is an (n, 3) array or a mapping from node id to point.
        """
        if isinstance(positions, np.ndarray):
            get = lambda v: positions[v]
        else:
            get = lambda v: np.asarray(positions[v], dtype=float)
        pc = get(self.center)
        out = np.zeros(3)
        for mu, e in zip(self.coeffs, self.neighbors):
            out += mu * (get(e) - pc)
        return out


def constraint_localizes(constraint: DisplacementConstraint, node: int, tol: float = 1e-9) -> bool:
    """Whether the constraint can pin ``node``: its column coefficient is
    bounded away from zero (center form needs sum(mu) != 0, neighbor form
    needs that node's mu != 0)."""
    return abs(constraint.coefficient_of(node)) > tol


# --- ratio-of-distance machinery -------------------------------------------

@dataclass(frozen=True)
class RatioMatrix:
    """Squared pairwise distances of a node group, over a reference edge.

    ``entries[a, b]`` holds (d_ab / d_ref)^2 where d_ref is the distance
    between the first two labels, so entry (0, 1) is exactly 1.
    """

    labels: tuple[int, ...]
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        labels = tuple(int(v) for v in self.labels)
        k = len(labels)
        if entries.shape != (k, k):
            raise ValueError("entry matrix must be square over the labels")
        entries.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "entries", entries)

    def validate(self, tol: float = 1e-9) -> None:
        e = self.entries
        if abs(e[0, 1] - 1.0) > tol:
            raise ValueError("reference entry (0, 1) must be 1")
        if np.abs(np.diag(e)).max() > tol:
            raise ValueError("diagonal must be zero")
        if np.abs(e - e.T).max() > tol * max(float(e.max()), 1.0):
            raise ValueError("entries must be symmetric")
        off = e[~np.eye(len(self.labels), dtype=bool)]
        if (off <= 0).any():
            raise ValueError("off-diagonal entries must be positive")


_SIN_FLOOR = 1e-9


def _edge(a: int, b: int) -> frozenset:
    return frozenset((a, b))


def _gather_facts(ms: MeasurementSet, o1: int, o2: int, angles, lengths, ratio_facts):
    """Pull what one node's measurements say about triangle (owner, o1, o2)."""
    v = ms.owner
    ent = ms.entries
    if ms.kind == RELPOS:
        if o1 in ent and o2 in ent:
            e1, e2 = np.asarray(ent[o1], float), np.asarray(ent[o2], float)
            d1, d2 = float(np.linalg.norm(e1)), float(np.linalg.norm(e2))
            if d1 > 0 and d2 > 0:
                lengths[_edge(v, o1)] = d1
                lengths[_edge(v, o2)] = d2
                angles[v] = float(np.arccos(np.clip(e1 @ e2 / (d1 * d2), -1.0, 1.0)))
    elif ms.kind == DISTANCE:
        for o in (o1, o2):
            if o in ent:
                lengths[_edge(v, o)] = float(ent[o])
    elif ms.kind == BEARING:
        if o1 in ent and o2 in ent:
            g1, g2 = np.asarray(ent[o1], float), np.asarray(ent[o2], float)
            angles[v] = float(np.arccos(np.clip(g1 @ g2, -1.0, 1.0)))
    elif ms.kind == ANGLE:
        key = (min(o1, o2), max(o1, o2))
        if key in ent:
            angles[v] = float(ent[key])
    elif ms.kind == RATIO:
        lo, hi = min(o1, o2), max(o1, o2)
        if (lo, hi) in ent:
            # entry value is d(v, lo) / d(v, hi)
            ratio_facts.append((_edge(v, lo), _edge(v, hi), float(ent[(lo, hi)])))


def triangle_ratios(
    meas_a: MeasurementSet, meas_b: MeasurementSet, meas_c: MeasurementSet
) -> tuple[float, float]:
    """Side ratios (d_ac / d_ab, d_bc / d_ab) of triangle (a, b, c).

    Resolves the triangle's similarity class from the three corner nodes'
    measurements: two known interior angles fix it by the law of sines;
    otherwise absolute side lengths and side ratios are chained until all
    three sides share one scale. Raises InsufficientMeasurementsError when
    neither route closes.
    """
    a, b, c = meas_a.owner, meas_b.owner, meas_c.owner
    angles: dict[int, float] = {}
    lengths: dict[frozenset, float] = {}
    ratio_facts: list[tuple[frozenset, frozenset, float]] = []
    for ms, (o1, o2) in ((meas_a, (b, c)), (meas_b, (a, c)), (meas_c, (a, b))):
        _gather_facts(ms, o1, o2, angles, lengths, ratio_facts)

    e_ab, e_ac, e_bc = _edge(a, b), _edge(a, c), _edge(b, c)

    if len(angles) >= 2:
        tri = dict(angles)
        if len(tri) == 2:
            (v1, a1), (v2, a2) = tri.items()
            missing = ({a, b, c} - {v1, v2}).pop()
            tri[missing] = np.pi - a1 - a2
        sines = {v: np.sin(tri[v]) for v in (a, b, c)}
        if all(s > _SIN_FLOOR for s in sines.values()):
            return sines[b] / sines[c], sines[a] / sines[c]

    known = dict(lengths)
    if not known and ratio_facts:
        known[e_ab] = 1.0
    changed = True
    while changed:
        changed = False
        for ex, ey, r in ratio_facts:
            if ey in known and ex not in known:
                known[ex] = r * known[ey]
                changed = True
            elif ex in known and ey not in known:
                if r <= 0:
                    raise InsufficientMeasurementsError(
                        f"nonpositive ratio in triangle ({a}, {b}, {c})"
                    )
                known[ey] = known[ex] / r
                changed = True
    if e_ab in known and e_ac in known and e_bc in known:
        base = known[e_ab]
        if base <= 0:
            raise InsufficientMeasurementsError(
                f"degenerate base edge in triangle ({a}, {b}, {c})"
            )
        return known[e_ac] / base, known[e_bc] / base
    raise InsufficientMeasurementsError(
        f"measurements cannot resolve triangle ({a}, {b}, {c})"
    )


def _triangle_schedule(ids: tuple[int, ...]) -> list[tuple[int, int, int]]:
    """Resolution order: each triangle's first two nodes span an edge whose
    length is already fixed when the triangle is reached."""
    if len(ids) == 5:
        i, j, k, h, l = ids
        return [(i, j, l), (i, l, k), (i, l, h), (j, l, k), (j, l, h), (k, l, h)]
    if len(ids) == 4:
        i, j, k, h = ids
        return [(i, j, k), (i, j, h), (i, k, h)]
    raise ValueError("ratio matrices are built over 4 or 5 nodes")


def build_ratio_matrix(
    measurements: Mapping[int, MeasurementSet], ids: Iterable[int]
) -> RatioMatrix:
    """Assemble the squared-ratio matrix of a 4- or 5-node group.

    Distances are normalized by the edge between the first two ids. Triangles
    are resolved in a fixed schedule, each sharing an already-known edge, and
    the first value computed for an edge wins.
    """
    ids = tuple(int(v) for v in ids)
    if len(set(ids)) != len(ids):
        raise ValueError("node ids must be distinct")
    for v in ids:
        if v not in measurements:
            raise InsufficientMeasurementsError(f"no measurements for node {v}")
    lengths: dict[frozenset, float] = {_edge(ids[0], ids[1]): 1.0}
    for a, b, c in _triangle_schedule(ids):
        base = _edge(a, b)
        r_ac, r_bc = triangle_ratios(measurements[a], measurements[b], measurements[c])
        if r_ac <= 0 or r_bc <= 0:
            raise InsufficientMeasurementsError(
                f"nonpositive side ratio in triangle ({a}, {b}, {c})"
            )
        scale = lengths[base]
        lengths.setdefault(_edge(a, c), r_ac * scale)
        lengths.setdefault(_edge(b, c), r_bc * scale)
    k = len(ids)
    entries = np.zeros((k, k))
    for x in range(k):
        for y in range(x + 1, k):
            d = lengths[_edge(ids[x], ids[y])]
            entries[x, y] = entries[y, x] = d * d
    return RatioMatrix(ids, entries)


# --- ratio matrix -> displacement constraint --------------------------------

def displacement_from_distance_matrix(
    matrix,
    ids: Iterable[int] | None = None,
    *,
    degeneracy_tol: float = 1e-9,
    colinear_tol: float = 1e-7,
    embed_tol: float = 1e-2,
) -> DisplacementConstraint:
    """Displacement constraint of a 5-node group from (squared) distances.

    ``matrix`` is a RatioMatrix or a 5x5 squared-distance array ordered
    (center, j, k, h, l); absolute and ratio forms give identical results.
    The geometric case decides the construction:

    - references non-coplanar: 3-D barycentric coordinates of the center;
    - references coplanar, (j, k, h) non-colinear: planar coordinates of l
      over (j, k, h), re-indexed with the l coefficient set to 1;
    - (j, k, h) colinear: the two-segment length relation along their line.
    """
    if isinstance(matrix, RatioMatrix):
        if ids is None:
            ids = matrix.labels
        d2 = matrix.entries
    else:
        d2 = np.asarray(matrix, dtype=float)
        if ids is None:
            raise ValueError("ids are required with a raw matrix")
    ids = tuple(int(v) for v in ids)
    if len(ids) != 5 or d2.shape != (5, 5):
        raise ValueError("expected five nodes (center plus four references)")
    center, nbrs = ids[0], ids[1:]

    ref_d2 = d2[1:, 1:]
    v2 = cayley_menger_volume_sq(ref_d2, rel_tol=degeneracy_tol)
    mean_sq_v = float(ref_d2[np.triu_indices(4, 1)].mean())
    if v2 > degeneracy_tol * mean_sq_v**3:
        mu = barycentric_3d(d2, embed_tol=embed_tol)
        return DisplacementConstraint(center, nbrs, mu, RATIO_MATRIX_SOURCE, branch="3d")

    s2 = cayley_menger_area_sq(d2[1, 2], d2[1, 3], d2[2, 3], rel_tol=degeneracy_tol)
    mean_sq_s = float((d2[1, 2] + d2[1, 3] + d2[2, 3]) / 3.0)
    if s2 > degeneracy_tol * mean_sq_s**2:
        # express the fourth reference over the first three, then re-center
        sub = d2[np.ix_((4, 1, 2, 3), (4, 1, 2, 3))]
        mu_l = barycentric_planar(sub, embed_tol=embed_tol)
        mu = np.array([-mu_l[0], -mu_l[1], -mu_l[2], 1.0])
        return DisplacementConstraint(center, nbrs, mu, RATIO_MATRIX_SOURCE, branch="planar")

    d_jk = float(np.sqrt(d2[1, 2]))
    d_kh = float(np.sqrt(d2[2, 3]))
    d_jh = float(np.sqrt(d2[1, 3]))
    mu3 = colinear_coefficients(d_jk, d_kh, d_jh, rel_tol=colinear_tol)
    mu = np.append(mu3, 0.0)
    return DisplacementConstraint(center, nbrs, mu, RATIO_MATRIX_SOURCE, branch="colinear")


def colinear_constraint(
    d_jk: float,
    d_kh: float,
    d_jh: float,
    ids: Iterable[int],
    rel_tol: float = 1e-7,
) -> DisplacementConstraint:
    """Displacement constraint when three of four references are colinear.

    ``ids`` orders (center, j, k, h, l); the constraint spans all four
    references with a zero coefficient on l.
    """
    ids = tuple(int(v) for v in ids)
    if len(ids) != 5:
        raise ValueError("expected five node ids (center, j, k, h, l)")
    mu3 = colinear_coefficients(d_jk, d_kh, d_jh, rel_tol=rel_tol)
    mu = np.append(mu3, 0.0)
    return DisplacementConstraint(ids[0], ids[1:], mu, RATIO_MATRIX_SOURCE, branch="colinear")


# --- per-node dispatch ------------------------------------------------------

def build_displacement_constraint(
    net: Network,
    center: int,
    neighbors: Iterable[int],
    measurements: Mapping[int, MeasurementSet],
    *,
    degeneracy_tol: float = 1e-9,
    colinear_tol: float = 1e-7,
    embed_tol: float = 1e-2,
) -> DisplacementConstraint:
    """Build one displacement constraint for ``center`` over four neighbors.

    Dispatch: the center's own relative-position measurements if it has
    them; else the first relative-position-capable neighbor that measures
    the whole group, re-centered there; else the ratio-matrix route.
    """
    nbrs = tuple(int(v) for v in neighbors)
    if len(nbrs) != 4 or len(set(nbrs)) != 4:
        raise ValueError("exactly four distinct neighbors are required")
    for v in nbrs:
        if not net.is_edge(center, v):
            raise ValueError(f"node {v} is not a neighbor of {center}")

    if net.nodes[center].sensor == RELPOS:
        ms = measurements.get(center)
        if ms is None or any(v not in ms.entries for v in nbrs):
            raise InsufficientMeasurementsError(
                f"node {center} lacks relative-position entries for {nbrs}"
            )
        cols = np.column_stack([np.asarray(ms.entries[v], float) for v in nbrs])
        mu = null_space_coefficients(cols)
        return DisplacementConstraint(center, nbrs, mu, source="relpos")

    relpos_nbrs = [v for v in nbrs if net.nodes[v].sensor == RELPOS]
    if relpos_nbrs:
        for j in relpos_nbrs:
            ms = measurements.get(j)
            others = tuple(v for v in nbrs if v != j)
            wanted = (center, *others)
            if ms is None or any(v not in ms.entries for v in wanted):
                continue
            cols = np.column_stack([np.asarray(ms.entries[v], float) for v in wanted])
            mu = null_space_coefficients(cols)
            return DisplacementConstraint(j, wanted, mu, source="neighbor-relpos")
        raise InsufficientMeasurementsError(
            f"no relative-position neighbor of {center} measures the whole group {nbrs}"
        )

    ids = (center, *nbrs)
    ratio = build_ratio_matrix(measurements, ids)
    return displacement_from_distance_matrix(
        ratio,
        ids,
        degeneracy_tol=degeneracy_tol,
        colinear_tol=colinear_tol,
        embed_tol=embed_tol,
    )


def build_network_constraints(
    net: Network,
    measurements: Mapping[int, MeasurementSet],
    *,
    require_viable: bool = True,
    viability_tol: float = 1e-9,
    degeneracy_tol: float = 1e-9,
    colinear_tol: float = 1e-7,
    embed_tol: float = 1e-2,
) -> tuple[list[DisplacementConstraint], dict[int, list[str]]]:
    """One displacement constraint per free node, first viable group wins.

    Neighbor quadruples are scanned in lexicographic id order and must be
    mutually adjacent. With ``require_viable`` the constraint must also be
    able to pin the node (see :func:`constraint_localizes`). Returns the
    constraints plus, per node that could not be covered, the reasons.
    """
    constraints: list[DisplacementConstraint] = []
    failures: dict[int, list[str]] = {}
    for i in net.free_ids:
        reasons: list[str] = []
        built = None
        for quad in combinations(net.neighbors(i), 4):
            if not all(net.is_edge(a, b) for a, b in combinations(quad, 2)):
                continue
            try:
                cand = build_displacement_constraint(
                    net,
                    i,
                    quad,
                    measurements,
                    degeneracy_tol=degeneracy_tol,
                    colinear_tol=colinear_tol,
                    embed_tol=embed_tol,
                )
            except (
                DegenerateGeometryError,
                InsufficientMeasurementsError,
                RealizabilityError,
            ) as exc:
                reasons.append(f"{quad}: {exc}")
                continue
            if require_viable and not constraint_localizes(cand, i, viability_tol):
                reasons.append(f"{quad}: constraint cannot pin node {i}")
                continue
            built = cand
            break
        if built is not None:
            constraints.append(built)
        else:
            if not reasons:
                reasons.append("no mutually adjacent neighbor quadruple")
            failures[i] = reasons
    return constraints, failures


# --- (de)serialization ------------------------------------------------------

def constraints_to_json(constraints: Iterable[DisplacementConstraint]) -> list[dict]:
    out = []
    for c in constraints:
        out.append(
            {
                "center": c.center,
                "neighbors": list(c.neighbors),
                "coeffs": [float(v) for v in c.coeffs],
                "source": c.source,
                "branch": c.branch,
            }
        )
    return out


def constraints_from_json(rows: Iterable[Mapping]) -> list[DisplacementConstraint]:
    return [
        DisplacementConstraint(
            center=int(r["center"]),
            neighbors=tuple(int(v) for v in r["neighbors"]),
            coeffs=np.asarray(r["coeffs"], dtype=float),
            source=r["source"],
            branch=r.get("branch"),
        )
        for r in rows
    ]

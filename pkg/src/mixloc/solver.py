"""Position recovery from constraints: direct, simultaneous, sequential.

- direct: solve M_ff p_f = -M_fa p_a in closed form.
- simultaneous: explicit-Euler iteration p_f <- p_f - gamma (M_ff p_f +
  M_fa p_a); each node's update uses only its own constraints' neighbors.
- sequential: localization wave; a node fixes its estimate once enough of
  its neighbors are localized (4 generally; 3 coplanar or 2 colinear as
  degenerate forms) and never revisits it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .constraints import (
    DisplacementConstraint,
    build_displacement_constraint,
    build_ratio_matrix,
    constraint_localizes,
    triangle_ratios,
)
from .errors import (
    CoverageError,
    DegenerateGeometryError,
    DivergenceError,
    InsufficientMeasurementsError,
    NotLocalizableError,
    RealizabilityError,
)
from .geometry import barycentric_planar, cayley_menger_area_sq, cayley_menger_volume_sq
from .network import MeasurementSet, Network
from .rigidity import check_localizable, scalar_displacement_row


@dataclass
class SolverConfig:
    """Knobs of the iterative solver.

    ``step_size`` is a positive float or "auto" (1 / lambda_max of the
    free-free block). ``initial_estimates`` is an (n_f, 3) array, a mapping
    from free node id to 3-vector, or None for uniform random points in
    ``init_box`` (default: the anchor bounding box inflated 2x, with a
    minimum half-extent of 1 so flat anchor sets still give a volume).
    ``record_stride`` controls how often the trajectory stores a state.
    """

    mode: str = "simultaneous"
    step_size: float | str = "auto"
    max_iters: int = 200_000
    convergence_eps: float = 1e-8
    seed: int | None = None
    initial_estimates: object = None
    init_box: tuple | None = None
    record_stride: int = 1

    def __post_init__(self):
        if self.mode not in ("direct", "simultaneous", "sequential"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.step_size != "auto" and not float(self.step_size) > 0:
            raise ValueError("step_size must be positive or 'auto'")
        if not self.convergence_eps > 0:
            raise ValueError("convergence_eps must be positive")
        if self.max_iters < 1 or self.record_stride < 1:
            raise ValueError("max_iters and record_stride must be at least 1")


@dataclass
class Trajectory:
    """Recorded states of an iterative solve.

    ``estimates[t]`` is the (n_f, 3) state at ``iterations[t]``;
    ``error_norms[t]`` is the Frobenius distance to the true positions when
    those are known, else None.
    """

    mode: str
    gamma: float | None
    free_ids: tuple[int, ...]
    iterations: list[int] = field(default_factory=list)
    estimates: list[np.ndarray] = field(default_factory=list)
    error_norms: list = field(default_factory=list)
    converged_at: int | None = None

    def record(self, iteration: int, state: np.ndarray, err) -> None:
        self.iterations.append(int(iteration))
        self.estimates.append(np.array(state, dtype=float))
        self.error_norms.append(None if err is None else float(err))

    def final_estimates(self) -> np.ndarray:
        return self.estimates[-1]

    def final_error(self):
        return self.error_norms[-1] if self.error_norms else None

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "converged_at": self.converged_at,
            "final_error": self.final_error(),
            "gamma": self.gamma,
        }

    def to_csv(self, path) -> None:
        """One row per recorded iteration and free node.

        ``err_norm`` repeats the whole-configuration error of that iteration
        on every node row; empty when the truth was unknown.
        """
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "node_id", "x", "y", "z", "err_norm"])
            for it, state, err in zip(self.iterations, self.estimates, self.error_norms):
                err_txt = "" if err is None else repr(float(err))
                for node, row in zip(self.free_ids, state):
                    writer.writerow(
                        [it, node] + [repr(float(v)) for v in row] + [err_txt]
                    )


def direct_solve(m_ff: np.ndarray, m_fa: np.ndarray, p_a) -> np.ndarray:
    """Closed-form free positions from the information-matrix blocks."""
    p_a = np.asarray(p_a, dtype=float).reshape(-1)
    if not check_localizable(m_ff):
        raise NotLocalizableError("free-free information block is singular")
    x = np.linalg.solve(m_ff, -(m_fa @ p_a))
    return x.reshape(-1, 3)


# --- simultaneous mode ------------------------------------------------------

def _displacements(constraints: Iterable) -> list[DisplacementConstraint]:
    return [c for c in constraints if isinstance(c, DisplacementConstraint)]


def node_update(
    node: int,
    estimates: Mapping[int, np.ndarray],
    constraints: Iterable[DisplacementConstraint],
    anchors: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """One node's next estimate from its own constraints only.

    Reads ``estimates`` solely for nodes that share a constraint with
    ``node``; constraints not involving the node are skipped before any
    estimate access.
    """
    anchors = np.asarray(anchors, dtype=float)
    n_a = anchors.shape[0]

    def pos(v: int) -> np.ndarray:
        return anchors[v] if v < n_a else np.asarray(estimates[v], dtype=float)

    delta = np.zeros(3)
    for c in constraints:
        coef = c.coefficient_of(node)
        if coef == 0.0:
            continue
        resid = np.zeros(3)
        pc = pos(c.center)
        for mu, e in zip(c.coeffs, c.neighbors):
            resid += mu * (pos(e) - pc)
        delta -= gamma * coef * resid
    return pos(node) + delta


def simultaneous_step(
    estimates: Mapping[int, np.ndarray],
    constraints: Iterable,
    anchors: np.ndarray,
    gamma: float,
) -> dict[int, np.ndarray]:
    """One bulk-synchronous iteration: all nodes read, then all write.

    Equals one explicit-Euler step of the stacked gradient flow: stacking
    the returned estimates reproduces p_f - gamma (M_ff p_f + M_fa p_a).
    """
    disp = _displacements(constraints)
    return {i: node_update(i, estimates, disp, anchors, gamma) for i in estimates}


def _scalar_blocks(
    constraints: Iterable[DisplacementConstraint], n_nodes: int, n_anchors: int
) -> tuple[np.ndarray, np.ndarray]:
    """Free-free and free-anchor blocks of the per-node coefficient Gram.

    The 3n-coordinate information matrix is this Gram kron the 3x3 identity,
    so eigenvalues and solves can stay at per-node scale.
    """
    rows = np.array([scalar_displacement_row(c, n_nodes) for c in constraints])
    if rows.size == 0:
        rows = np.zeros((0, n_nodes))
    gram = rows.T @ rows
    return gram[n_anchors:, n_anchors:], gram[n_anchors:, :n_anchors]


def initial_estimates(net: Network, config: SolverConfig) -> np.ndarray:
    """Starting state per the config: given values or seeded random box."""
    n_f = len(net.free_ids)
    given = config.initial_estimates
    if given is not None:
        if isinstance(given, Mapping):
            return np.array([np.asarray(given[i], dtype=float) for i in net.free_ids])
        arr = np.asarray(given, dtype=float)
        if arr.shape != (n_f, 3):
            raise ValueError(f"initial estimates must have shape ({n_f}, 3)")
        return arr.copy()
    if config.init_box is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in config.init_box)
    else:
        a = net.anchor_positions()
        center = (a.min(axis=0) + a.max(axis=0)) / 2.0
        half = np.maximum((a.max(axis=0) - a.min(axis=0)), 1.0)  # inflate 2x
        lo, hi = center - half, center + half
    rng = np.random.default_rng(config.seed)
    return rng.uniform(lo, hi, size=(n_f, 3))


def solve_simultaneous(
    config: SolverConfig, net: Network, constraints: Iterable
) -> Trajectory:
    """Run the distributed iteration to convergence.

    Every free node must be pinned by at least one constraint (nonzero
    column coefficient) before the iteration starts; a singular free-free
    block downgrades to a warning and the iteration proceeds best-effort.
    Raises DivergenceError when the error norm grows to 10x its initial
    value, reporting the step size used.
    """
    disp = _displacements(constraints)
    free = net.free_ids
    uncovered = [
        i for i in free if not any(abs(c.coefficient_of(i)) > 1e-9 for c in disp)
    ]
    if uncovered:
        raise CoverageError(f"free nodes without a pinning constraint: {uncovered}")

    n = net.n
    n_a = net.n_anchors
    m_ff, m_fa = _scalar_blocks(disp, n, n_a)
    eigs = np.linalg.eigvalsh(m_ff)
    lam_max = float(eigs[-1])
    if not check_localizable(m_ff):
        warnings.warn("free-free block is singular; iterating best-effort", stacklevel=2)
    if config.step_size == "auto":
        if lam_max <= 0.0:
            raise NotLocalizableError("free-free block is zero; no step size exists")
        gamma = 1.0 / lam_max
    else:
        gamma = float(config.step_size)

    p_a = net.anchor_positions()
    truth = net.free_positions()
    state = initial_estimates(net, config)
    traj = Trajectory(mode="simultaneous", gamma=gamma, free_ids=free)

    err0 = float(np.linalg.norm(state - truth))
    traj.record(0, state, err0)
    for k in range(1, config.max_iters + 1):
        grad = m_ff @ state + m_fa @ p_a
        update = -gamma * grad
        state = state + update
        err = float(np.linalg.norm(state - truth))
        update_norm = float(np.linalg.norm(update))
        converged = update_norm < config.convergence_eps
        if converged or k % config.record_stride == 0 or k == config.max_iters:
            traj.record(k, state, err)
        if converged:
            traj.converged_at = k
            break
        if err0 > 0.0 and err > 10.0 * err0:
            raise DivergenceError(
                f"error norm grew from {err0:.6g} to {err:.6g}", gamma=gamma
            )
    return traj


# --- sequential mode --------------------------------------------------------

@dataclass
class SequentialResult:
    """Outcome of the localization wave.

    ``round_localized`` maps node id to the 1-based round in which its
    position was fixed.
    """

    estimates: dict[int, np.ndarray]
    order: list[int]
    unlocalized: list[int]
    rounds: int
    round_localized: dict[int, int] = field(default_factory=dict)

    def positions(self, net: Network) -> np.ndarray:
        """Full (n, 3) array: anchors, then estimates (NaN if unlocalized)."""
        out = np.full((net.n, 3), np.nan)
        out[: net.n_anchors] = net.anchor_positions()
        for i, v in self.estimates.items():
            out[i] = v
        return out


def _position_from_constraint(
    c: DisplacementConstraint, node: int, pos
) -> np.ndarray:
    """Solve the constraint for one node, all other participants known."""
    if c.center == node:
        acc = np.zeros(3)
        for mu, e in zip(c.coeffs, c.neighbors):
            acc += mu * pos(e)
        return acc / c.coeff_sum
    pj = pos(c.center)
    mu_node = None
    acc = np.zeros(3)
    for mu, e in zip(c.coeffs, c.neighbors):
        if e == node:
            mu_node = mu
        else:
            acc += mu * (pos(e) - pj)
    return pj - acc / mu_node


def _try_three(net, i, triple, measurements, pos, degeneracy_tol, embed_tol):
    """Coplanar path: i expressed over three references containing it."""
    try:
        ratio = build_ratio_matrix(measurements, (i, *triple))
    except InsufficientMeasurementsError:
        return None
    d2 = ratio.entries
    mean_sq = float(d2[np.triu_indices(4, 1)].mean())
    v2 = cayley_menger_volume_sq(d2, rel_tol=degeneracy_tol)
    if v2 > degeneracy_tol * mean_sq**3:
        return None  # node is off the references' plane
    s2 = cayley_menger_area_sq(d2[1, 2], d2[1, 3], d2[2, 3], rel_tol=degeneracy_tol)
    mean_ref = float((d2[1, 2] + d2[1, 3] + d2[2, 3]) / 3.0)
    if s2 <= degeneracy_tol * mean_ref**2:
        return None
    try:
        mu = barycentric_planar(d2, embed_tol=embed_tol)
    except (DegenerateGeometryError, RealizabilityError):
        return None
    return mu[0] * pos(triple[0]) + mu[1] * pos(triple[1]) + mu[2] * pos(triple[2])


def _try_two(net, i, pair, measurements, pos, colinear_tol):
    """Colinear path: i on the line of two references."""
    j, k = pair
    try:
        r_ik, r_jk = triangle_ratios(measurements[i], measurements[j], measurements[k])
    except (InsufficientMeasurementsError, KeyError):
        return None
    d_ij, d_ik, d_jk = 1.0, r_ik, r_jk
    scale = max(d_ij, d_ik, d_jk)
    gaps = {
        "k_between": abs(d_ik + d_jk - d_ij),
        "j_between": abs(d_ij + d_jk - d_ik),
        "i_between": abs(d_ij + d_ik - d_jk),
    }
    case = min(gaps, key=gaps.get)
    if gaps[case] > colinear_tol * scale:
        return None
    if case == "k_between":
        return -(d_ik / d_jk) * pos(j) + (d_ij / d_jk) * pos(k)
    if case == "j_between":
        return (d_ik / d_jk) * pos(j) - (d_ij / d_jk) * pos(k)
    return (d_ik / d_jk) * pos(j) + (d_ij / d_jk) * pos(k)


def solve_sequential(
    net: Network,
    measurements: Mapping[int, MeasurementSet],
    *,
    viability_tol: float = 1e-9,
    degeneracy_tol: float = 1e-9,
    colinear_tol: float = 1e-7,
    embed_tol: float = 1e-2,
) -> SequentialResult:
    """Localization wave over rounds of node-id order.

    Each unlocalized node scans mutually adjacent 4-combinations of its
    localized neighbors in lexicographic order and fixes its position from
    the first constraint that can pin it; with fewer (or no viable)
    combinations it falls back to the coplanar 3-reference and colinear
    2-reference forms. A node localizes at most once. Terminates when a
    full round adds nobody; whoever remains is reported unlocalized.
    """
    anchors = net.anchor_positions()
    estimates: dict[int, np.ndarray] = {}
    localized = set(net.anchor_ids)
    order: list[int] = []

    def pos(v: int) -> np.ndarray:
        return anchors[v] if v < net.n_anchors else estimates[v]

    def try_localize(i: int) -> np.ndarray | None:
        loc_nbrs = [v for v in net.neighbors(i) if v in localized]
        for quad in combinations(loc_nbrs, 4):
            if not all(net.is_edge(a, b) for a, b in combinations(quad, 2)):
                continue
            try:
                c = build_displacement_constraint(
                    net, i, quad, measurements,
                    degeneracy_tol=degeneracy_tol, embed_tol=embed_tol,
                    colinear_tol=colinear_tol,
                )
            except (DegenerateGeometryError, InsufficientMeasurementsError,
                    RealizabilityError):
                continue
            if not constraint_localizes(c, i, viability_tol):
                continue
            return _position_from_constraint(c, i, pos)
        for triple in combinations(loc_nbrs, 3):
            if not all(net.is_edge(a, b) for a, b in combinations(triple, 2)):
                continue
            p = _try_three(net, i, triple, measurements, pos, degeneracy_tol, embed_tol)
            if p is not None:
                return p
        for pair in combinations(loc_nbrs, 2):
            if not net.is_edge(*pair):
                continue
            p = _try_two(net, i, pair, measurements, pos, colinear_tol)
            if p is not None:
                return p
        return None

    rounds = 0
    round_localized: dict[int, int] = {}
    while True:
        rounds += 1
        progress = False
        for i in net.free_ids:
            if i in localized:
                continue
            p = try_localize(i)
            if p is not None:
                estimates[i] = np.asarray(p, dtype=float)
                localized.add(i)
                order.append(i)
                round_localized[i] = rounds
                progress = True
        if not progress:
            break
    unlocalized = [i for i in net.free_ids if i not in estimates]
    return SequentialResult(estimates, order, unlocalized, rounds, round_localized)

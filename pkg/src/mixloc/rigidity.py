"""Stacked constraint system: rigidity matrix, information matrix, bounds.

The rigidity matrix R stacks three rows per angle constraint (one per
triangle identity) and three rows per displacement constraint, over
node-major coordinates (x0, y0, z0, x1, ...). Angle rows are quadratic
gradients evaluated at the anchor positions, so they occupy anchor columns
only; displacement rows are constant in the positions. Consequently R is
unchanged when free positions are replaced by zeros.

M = R^T R is the information matrix. With anchors first, the free-free block
M_ff decides localizability: the free positions are the unique solution of
M_ff p_f = -M_fa p_a exactly when M_ff is nonsingular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .constraints import AngleConstraint, DisplacementConstraint
from .errors import BoundUnavailableError


def _split(constraints: Iterable) -> tuple[list[AngleConstraint], list[DisplacementConstraint]]:
    angles, disps = [], []
    for c in constraints:
        if isinstance(c, AngleConstraint):
            angles.append(c)
        elif isinstance(c, DisplacementConstraint):
            disps.append(c)
        else:
            raise TypeError(f"unsupported constraint type {type(c).__name__}")
    return angles, disps


def angle_displacement_value(constraints: Iterable, positions) -> np.ndarray:
    """Stacked constraint values: angle identities, then displacement residuals.

    Angle constraints contribute three scalars each (one per triangle
    identity); displacement constraints contribute their 3-vector residual.
    Zero at any configuration consistent with the constraints.
    """
    p = np.asarray(positions, dtype=float)
    angles, disps = _split(constraints)
    vals = []
    for c in angles:
        vals.extend(c.residuals(p))
    for c in disps:
        vals.extend(c.residual(p))
    return np.asarray(vals)


def _identity_roles(constraint: AngleConstraint):
    """Each identity as (vertex a, vertex b, shared third c, w_ab, w_ba)."""
    i, j, k = constraint.nodes
    return (
        (i, k, j, constraint.w_ik, constraint.w_ki),
        (i, j, k, constraint.w_ij, constraint.w_ji),
        (j, k, i, constraint.w_jk, constraint.w_kj),
    )


def angle_rows(constraint: AngleConstraint, positions, n_nodes: int) -> np.ndarray:
    """Gradient rows of the constraint's three identities at ``positions``.

    For the identity w_ab (e_ab . e_ac) + w_ba (e_ba . e_bc) = 0 the gradient
    places w_ab (2 p_a - p_b - p_c) + w_ba (p_c - p_b) at vertex a, the
    mirrored block at vertex b, and (w_ab - w_ba)(p_b - p_a) at the shared
    vertex c.
    """
    p = np.asarray(positions, dtype=float)
    rows = np.zeros((3, 3 * n_nodes))
    for r, (a, b, c, w_ab, w_ba) in enumerate(_identity_roles(constraint)):
        rows[r, 3 * a : 3 * a + 3] = w_ab * (2 * p[a] - p[b] - p[c]) + w_ba * (p[c] - p[b])
        rows[r, 3 * b : 3 * b + 3] = w_ab * (p[c] - p[a]) + w_ba * (2 * p[b] - p[a] - p[c])
        rows[r, 3 * c : 3 * c + 3] = (w_ab - w_ba) * (p[b] - p[a])
    return rows


def scalar_displacement_row(constraint: DisplacementConstraint, n_nodes: int) -> np.ndarray:
    """Per-node coefficients: -sum(mu) at the center, mu_e at each neighbor."""
    row = np.zeros(n_nodes)
    row[constraint.center] = -constraint.coeff_sum
    for mu, e in zip(constraint.coeffs, constraint.neighbors):
        row[e] = mu
    return row


def displacement_rows(constraint: DisplacementConstraint, n_nodes: int) -> np.ndarray:
    """Three coordinate rows of one displacement constraint."""
    return np.kron(scalar_displacement_row(constraint, n_nodes), np.eye(3))


def build_rigidity_matrix(constraints: Iterable, positions) -> np.ndarray:
    """Stack angle rows, then displacement rows, over 3n coordinates.

    ``positions`` is the full (n, 3) configuration; only anchor rows are read
    (free rows may be zeros). Accepts a mixed list of angle and displacement
    constraints; angle rows always come first.
    """
    p = np.asarray(positions, dtype=float)
    n = p.shape[0]
    angles, disps = _split(constraints)
    rows = [angle_rows(c, p, n) for c in angles]
    for c in disps:
        rows.append(displacement_rows(c, n))
    if not rows:
        return np.zeros((0, 3 * n))
    return np.vstack(rows)


def rigidity_row_tags(constraints: Iterable) -> list[tuple[str, int]]:
    """Provenance of each rigidity row: (kind, index within its kind)."""
    angles, disps = _split(constraints)
    tags = []
    for idx in range(len(angles)):
        tags.extend([("angle", idx)] * 3)
    for idx in range(len(disps)):
        tags.extend([("displacement", idx)] * 3)
    return tags


def trivial_motion_basis(positions) -> np.ndarray:
    """Orthonormal basis of the always-admissible motions.

    Spanned by three translations, three rotations (one per skew-symmetric
    generator applied to the configuration), and uniform scaling. Generically
    7-dimensional; degenerate configurations (all nodes colinear through the
    origin, for example) collapse some generators, in which case a warning is
    issued and the basis has fewer columns.
    """
    p = np.asarray(positions, dtype=float)
    n = p.shape[0]
    cols = [np.tile(np.eye(3)[:, d], n) for d in range(3)]
    generators = (
        np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
        np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
        np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    )
    for a in generators:
        cols.append((p @ a.T).reshape(3 * n))
    cols.append(p.reshape(3 * n))
    gen = np.column_stack(cols)
    u, s, _ = np.linalg.svd(gen, full_matrices=False)
    rank = int((s > 1e-9 * s[0]).sum()) if s[0] > 0 else 0
    if rank < 7:
        warnings.warn(
            f"trivial motion space has dimension {rank}, not 7 (degenerate configuration)",
            stacklevel=2,
        )
    return u[:, :rank]


def matrix_nullity(matrix: np.ndarray, tol: float = 1e-9) -> int:
    if matrix.size == 0:
        return matrix.shape[1]
    svals = np.linalg.svd(matrix, compute_uv=False)
    top = float(svals[0])
    if top == 0.0:
        return matrix.shape[1]
    rank = int((svals > tol * top).sum())
    return matrix.shape[1] - rank


def is_infinitesimally_rigid(
    rigidity: np.ndarray, positions=None, tol: float = 1e-9
) -> tuple[bool, int]:
    """Rigid exactly when only the seven trivial motions survive.

    ``positions`` (the configuration the matrix was built at) is used for a
    shape cross-check only.
    """
    if positions is not None:
        n = np.asarray(positions).shape[0]
        if rigidity.shape[1] != 3 * n:
            raise ValueError("rigidity matrix does not match the configuration size")
    nullity = matrix_nullity(rigidity, tol)
    return nullity == 7, nullity


@dataclass(frozen=True)
class InformationMatrix:
    """M = R^T R with its anchors-first block partition."""

    m: np.ndarray
    n_anchors: int

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("information matrix must be square")
        if not 0 <= 3 * self.n_anchors <= m.shape[0]:
            raise ValueError("anchor block exceeds the matrix")
        object.__setattr__(self, "m", m)

    @property
    def m_aa(self) -> np.ndarray:
        s = 3 * self.n_anchors
        return self.m[:s, :s]

    @property
    def m_af(self) -> np.ndarray:
        s = 3 * self.n_anchors
        return self.m[:s, s:]

    @property
    def m_fa(self) -> np.ndarray:
        s = 3 * self.n_anchors
        return self.m[s:, :s]

    @property
    def m_ff(self) -> np.ndarray:
        s = 3 * self.n_anchors
        return self.m[s:, s:]


def information_matrix(rigidity: np.ndarray, n_anchors: int) -> InformationMatrix:
    return InformationMatrix(rigidity.T @ rigidity, n_anchors)


def check_localizable(m_ff: np.ndarray, tol: float = 1e-10) -> bool:
    """Nonsingularity of the positive-semidefinite free-free block."""
    if m_ff.size == 0:
        return True
    vals = np.linalg.eigvalsh(m_ff)
    top = float(vals[-1])
    if top <= 0.0:
        return False
    return float(vals[0]) > tol * top


@dataclass(frozen=True)
class NoiseMargin:
    """Perturbation size of the free-free block against its spectral floor."""

    ok: bool
    margin: float
    delta_norm: float
    lambda_min: float


def noise_margin_ok(m_ff_clean: np.ndarray, m_ff_noisy: np.ndarray) -> NoiseMargin:
    """Whether the noisy free-free block is guaranteed nonsingular.

    Sufficient condition: the spectral norm of the perturbation stays below
    the smallest eigenvalue of the clean block. ``margin`` is their ratio
    (> 1 means the guarantee fails); infinite when the clean block is
    singular.
    """
    if m_ff_clean.shape != m_ff_noisy.shape:
        raise ValueError("blocks must have the same shape")
    delta = m_ff_noisy - m_ff_clean
    delta_norm = float(np.linalg.norm(delta, 2)) if delta.size else 0.0
    lam_min = float(np.linalg.eigvalsh(m_ff_clean)[0]) if m_ff_clean.size else 0.0
    if lam_min > 0.0:
        margin = delta_norm / lam_min
    else:
        margin = 0.0 if delta_norm == 0.0 else np.inf
    return NoiseMargin(delta_norm < lam_min, margin, delta_norm, lam_min)


def _weighted_geometric_median(
    points: np.ndarray, weights: np.ndarray, max_iters: int = 10_000
) -> tuple[np.ndarray, float]:
    """Minimize sum_i w_i ||p_i - x|| by Weiszfeld iteration."""
    active = weights > 0
    pts = points[active]
    w = weights[active]
    if pts.shape[0] == 0:
        return points.mean(axis=0), 0.0
    scale = max(float(np.abs(pts).max()), 1.0)
    guard = 1e-12 * scale
    x = (w[:, None] * pts).sum(axis=0) / w.sum()
    for _ in range(max_iters):
        d = np.linalg.norm(pts - x, axis=1)
        d = np.maximum(d, guard)
        inv = w / d
        x_new = (inv[:, None] * pts).sum(axis=0) / inv.sum()
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step < 1e-10 * scale:
            break
    cost = float((np.linalg.norm(pts - x, axis=1) * w).sum())
    return x, cost


def error_bound(
    m_ff: np.ndarray,
    delta_ff: np.ndarray,
    delta_fa: np.ndarray,
    positions,
    n_anchors: int,
) -> tuple[float, np.ndarray]:
    """Noise-sensitivity figure for the perturbed fixed point, in length units.

    The numerator sums node distances to a reference point, anchors weighted
    by the fa-block perturbation norm and free nodes by the ff-block norm;
    the reference point minimizing that sum (a Fermat-Weber point, found by
    Weiszfeld iteration) is returned alongside the value. The denominator
    rescales by the clean block's conditioning under the perturbation. The
    value is translation invariant; it tracks the estimation error's scale
    but is not certified to dominate it. Raises BoundUnavailableError when
    the perturbation norm reaches the smallest eigenvalue of the clean
    free-free block, where the formula is meaningless.
    """
    p = np.asarray(positions, dtype=float)
    margin = noise_margin_ok(m_ff, m_ff + delta_ff)
    if not margin.ok:
        raise BoundUnavailableError(
            "perturbation norm "
            f"{margin.delta_norm:.6g} reaches lambda_min {margin.lambda_min:.6g}"
        )
    norm_fa = float(np.linalg.norm(delta_fa, 2)) if delta_fa.size else 0.0
    norm_ff = margin.delta_norm
    weights = np.empty(p.shape[0])
    weights[:n_anchors] = norm_fa
    weights[n_anchors:] = norm_ff
    p_o, numerator = _weighted_geometric_median(p, weights)
    inner = np.eye(m_ff.shape[0]) + np.linalg.solve(m_ff, delta_ff)
    denominator = float(np.linalg.norm(inner, 2)) * float(np.linalg.norm(m_ff, 2))
    return numerator / denominator, p_o

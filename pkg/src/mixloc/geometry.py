"""Distance-geometry kernels.

Everything here works on squared-distance data alone, so the same routines
accept absolute squared distances or squared distances divided by a common
reference edge: all outputs are invariant to a global positive scaling of the
input matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateGeometryError, RealizabilityError


def squared_distance_matrix(points) -> np.ndarray:
    """Matrix of pairwise squared distances of a (k, d) point array."""
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def points_colinear(points, rel_tol: float = 1e-9) -> bool:
    """True when the points lie on one line.

    Judged by the second singular value of the difference matrix against
    ``rel_tol`` times the largest pairwise distance.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return True
    s = np.linalg.svd(pts[1:] - pts[0], compute_uv=False)
    pair = np.sqrt(squared_distance_matrix(pts))
    scale = float(pair.max())
    if scale == 0.0:
        return True
    return len(s) < 2 or s[1] <= rel_tol * scale


def _check_sqdist(d2: np.ndarray, size: int) -> np.ndarray:
    d2 = np.asarray(d2, dtype=float)
    if d2.shape != (size, size):
        raise ValueError(f"expected a {size}x{size} squared-distance matrix")
    if (d2 < 0).any():
        raise ValueError("squared distances must be nonnegative")
    return d2


def cayley_menger_volume_sq(d2, rel_tol: float = 1e-9) -> float:
    """Squared volume of the tetrahedron given by a 4x4 squared-distance matrix.

    With rows/columns ordered (j, k, h, l) the value is det(G) / 288 where
    G[a, b] = d2[0, a+1] + d2[0, b+1] - d2[a+1, b+1] doubled on the diagonal.
    Small negative round-off (within ``rel_tol`` times the cubed mean squared
    distance) is clamped to zero. Zero means the four points are coplanar.
    """
    d2 = _check_sqdist(d2, 4)
    g = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            g[a, b] = d2[0, a + 1] + d2[0, b + 1] - d2[a + 1, b + 1]
    value = float(np.linalg.det(g)) / 288.0
    mean_sq = float(d2[np.triu_indices(4, 1)].mean())
    if -rel_tol * mean_sq**3 <= value < 0.0:
        return 0.0
    return value


def cayley_menger_area_sq(
    d2_jk: float, d2_jh: float, d2_kh: float, rel_tol: float = 1e-9
) -> float:
    """Squared area of triangle (j, k, h) from its squared side lengths.

    det of the 2x2 Gram form divided by 16, with small negative round-off
    (within ``rel_tol`` times the squared mean squared distance) clamped to
    zero. Zero means the three points are colinear.
    """
    d2_jk, d2_jh, d2_kh = float(d2_jk), float(d2_jh), float(d2_kh)
    if min(d2_jk, d2_jh, d2_kh) < 0:
        raise ValueError("squared distances must be nonnegative")
    cross = d2_jk + d2_jh - d2_kh
    det = 4.0 * d2_jk * d2_jh - cross * cross
    value = det / 16.0
    mean_sq = (d2_jk + d2_jh + d2_kh) / 3.0
    if -rel_tol * mean_sq**2 <= value < 0.0:
        return 0.0
    return value


def embed_congruent(d2, dim: int, rel_tol: float = 1e-6) -> np.ndarray:
    """Embed points with the given squared-distance matrix into ``dim`` axes.

    Classical multidimensional scaling: double-center -d2/2, eigendecompose,
    and keep the top ``dim`` eigenpairs. The result is a congruent copy of any
    point set realizing d2 (a scaled copy when d2 is a ratio matrix).

    Raises RealizabilityError when d2 needs a significant negative eigenvalue
    or more than ``dim`` significant positive ones, judged against ``rel_tol``
    times the leading eigenvalue.
    """
    k = np.asarray(d2).shape[0]
    d2 = _check_sqdist(d2, k)
    j = np.eye(k) - np.full((k, k), 1.0 / k)
    b = -0.5 * j @ d2 @ j
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    top = max(float(vals[0]), 0.0)
    if top == 0.0:
        return np.zeros((k, dim))
    if float(vals[-1]) < -rel_tol * top:
        raise RealizabilityError(
            f"distance data is not Euclidean (eigenvalue {vals[-1]:.3e} vs {top:.3e})"
        )
    if dim < k - 1 and float(vals[dim]) > rel_tol * top:
        raise RealizabilityError(
            f"distance data needs more than {dim} dimensions (eigenvalue {vals[dim]:.3e})"
        )
    kept = np.clip(vals[:dim], 0.0, None)
    return vecs[:, :dim] * np.sqrt(kept)


def null_space_coefficients(columns) -> np.ndarray:
    """Coefficient vector in the (numerical) null space of a column matrix.

    Returns the right-singular vector of the smallest singular value,
    normalized to unit Euclidean norm with its first nonzero entry positive.
    """
    mat = np.asarray(columns, dtype=float)
    if mat.ndim != 2:
        raise ValueError("expected a 2-D matrix of column vectors")
    _, _, vt = np.linalg.svd(mat)
    mu = vt[-1]
    return normalize_coefficients(mu)


def normalize_coefficients(mu) -> np.ndarray:
    """Scale to unit norm and flip sign so the first nonzero entry is positive."""
    mu = np.asarray(mu, dtype=float)
    norm = float(np.linalg.norm(mu))
    if norm == 0.0:
        raise ValueError("zero coefficient vector")
    mu = mu / norm
    big = float(np.abs(mu).max())
    for v in mu:
        if abs(v) > 1e-12 * big:
            if v < 0:
                mu = -mu
            break
    return mu


def barycentric_3d(d2, embed_tol: float = 1e-6) -> np.ndarray:
    """Barycentric coordinates of a point over four non-coplanar references.

    ``d2`` is the 5x5 squared-distance (or ratio) matrix ordered (center,
    j, k, h, l). Returns (mu_j, mu_k, mu_h, mu_l) with sum 1 such that
    p_center = mu_j p_j + mu_k p_k + mu_h p_h + mu_l p_l for any point set
    realizing d2. The result is invariant to scaling d2 by any positive
    factor, so ratio matrices give the same coordinates as raw distances.
    ``embed_tol`` is the realizability tolerance of :func:`embed_congruent`;
    loosen it when d2 carries measurement noise.
    """
    d2 = _check_sqdist(d2, 5)
    ref = cayley_menger_volume_sq(d2[1:, 1:])
    if ref <= 0.0:
        raise DegenerateGeometryError(
            "reference points are coplanar; use the planar construction"
        )
    pts = embed_congruent(d2, 3, rel_tol=embed_tol)
    a = np.vstack([np.ones(4), pts[1:].T])
    b = np.concatenate([[1.0], pts[0]])
    try:
        mu = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("reference simplex is numerically singular") from exc
    return mu


def barycentric_planar(
    d2,
    sum_tol: float = 1e-5,
    embed_tol: float = 1e-6,
    coplanar_tol: float = 1e-9,
) -> np.ndarray:
    """Barycentric coordinates over three references for a coplanar quadruple.

    ``d2`` is the 4x4 squared-distance (or ratio) matrix ordered (point,
    j, k, h); the four points must be coplanar within ``coplanar_tol`` (a
    relative bound on the Cayley-Menger volume) and (j, k, h) non-colinear.
    Magnitudes come from Cayley-Menger area ratios; signs come from a 2-D
    congruent embedding. The signed coordinates must sum to 1.
    """
    d2 = _check_sqdist(d2, 4)
    ref_area = cayley_menger_area_sq(d2[1, 2], d2[1, 3], d2[2, 3])
    if ref_area <= 0.0:
        raise DegenerateGeometryError(
            "reference points are colinear; use the colinear construction"
        )
    mean_sq = float(d2[np.triu_indices(4, 1)].mean())
    if cayley_menger_volume_sq(d2) > coplanar_tol * mean_sq**3:
        raise DegenerateGeometryError("points are not coplanar")
    # areas of the triangles replacing one reference with the target point
    idx = {
        0: (0, 2, 3),  # target, k, h  -> replaces j
        1: (0, 3, 1),  # target, h, j  -> replaces k
        2: (0, 1, 2),  # target, j, k  -> replaces h
    }
    mags = np.empty(3)
    for a, (t0, t1, t2) in idx.items():
        area = cayley_menger_area_sq(d2[t0, t1], d2[t0, t2], d2[t1, t2])
        mags[a] = np.sqrt(max(area, 0.0) / ref_area)
    pts = embed_congruent(d2, 2, rel_tol=embed_tol)
    a = np.vstack([np.ones(3), pts[1:].T])
    b = np.concatenate([[1.0], pts[0]])
    try:
        signed = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometryError("reference triangle is numerically singular") from exc
    mu = np.where(signed < 0, -mags, mags)
    total = float(mu.sum())
    if abs(total - 1.0) > sum_tol:
        raise RealizabilityError(
            f"planar coordinates sum to {total:.6f}, not 1; inconsistent distance data"
        )
    return mu


def colinear_coefficients(d_jk: float, d_kh: float, d_jh: float, rel_tol: float = 1e-7):
    """Constraint coefficients for three colinear reference points.

    Given pairwise distances of colinear points (j, k, h), returns
    (mu_j, mu_k, mu_h) with mu_j e_j + mu_k e_k + mu_h e_h = 0 for the
    displacements e from any center to the three points. Exactly one of the
    triangle equalities must hold within ``rel_tol`` relative tolerance.
    """
    d_jk, d_kh, d_jh = float(d_jk), float(d_kh), float(d_jh)
    if min(d_jk, d_kh, d_jh) <= 0:
        raise ValueError("distances must be positive")
    scale = max(d_jk, d_kh, d_jh)
    gaps = {
        "k_between": abs(d_jk + d_kh - d_jh),
        "j_between": abs(d_jk + d_jh - d_kh),
        "h_between": abs(d_jh + d_kh - d_jk),
    }
    case = min(gaps, key=gaps.get)
    if gaps[case] > rel_tol * scale:
        raise DegenerateGeometryError(
            "no triangle equality holds: the three points are not colinear"
        )
    if case == "k_between":
        r = d_jk / d_kh
        return np.array([-1.0, 1.0 + r, -r])
    if case == "j_between":
        r = d_jk / d_jh
        return np.array([1.0 + r, -1.0, -r])
    r = d_jh / d_kh
    return np.array([-1.0, -r, 1.0 + r])

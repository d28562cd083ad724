"""Rotated-rectangle occupancy sets, exact distances, and dual certificates.

A vehicle footprint is the half-space set {p : A p <= b} with
A = [RO(phi)^T; -RO(phi)^T] and b = [l/2, w/2, l/2, w/2] + A [x, y]^T.
Distances between two such sets are computed exactly by vertex/edge
enumeration, and certified from below by dual variables (gamma, mu, s)
satisfying A1^T gamma + s = 0, A2^T mu - s = 0, ||s|| <= 1, gamma, mu >= 0,
for which -(b1^T gamma + b2^T mu) never exceeds the true distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CERT_TOL = 1e-6


class GeometryError(ValueError):
    pass


class InfeasibleCertificateError(GeometryError):
    """Certificate violates its feasibility system beyond tolerance."""


class IntersectingPolytopesError(GeometryError):
    """No separating certificate with positive bound exists."""


def rotation_matrix(phi: float, small_angle: bool = False) -> np.ndarray:
    """2x2 rotation; `small_angle` replaces (cos, sin) by (1, phi)."""
    if small_angle:
        return np.array([[1.0, -phi], [phi, 1.0]])
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def rotation_matrix_d(phi: float) -> np.ndarray:
    """Derivative of the exact rotation matrix with respect to phi."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class PolytopeHalfspaces:
    """Rotated rectangle {p in R^2 : A p <= b} with A 4x2 and b length 4."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        if self.A.shape != (4, 2) or self.b.shape != (4,):
            raise GeometryError("expected A of shape (4,2) and b of shape (4,)")

    @property
    def rotation(self) -> np.ndarray:
        """Rotation R such that A = [R^T; -R^T]."""
        return self.A[:2].T

    @property
    def half_dims(self) -> np.ndarray:
        """(half length, half width) along the body axes."""
        return 0.5 * (self.b[:2] + self.b[2:])

    @property
    def center(self) -> np.ndarray:
        return self.rotation @ (0.5 * (self.b[:2] - self.b[2:]))

    def corners(self) -> np.ndarray:
        """The four vertices, counter-clockwise, shape (4,2)."""
        h = self.half_dims
        local = np.array(
            [[h[0], h[1]], [-h[0], h[1]], [-h[0], -h[1]], [h[0], -h[1]]]
        )
        return self.center + local @ self.rotation.T

    def contains(self, p: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ np.asarray(p, dtype=float) <= self.b + tol))


def vehicle_polytope(
    x: float, y: float, phi: float, length: float, width: float, small_angle: bool = False
) -> PolytopeHalfspaces:
    """Footprint of a length x width vehicle centered at (x, y), heading phi."""
    ro_t = rotation_matrix(phi, small_angle=small_angle).T
    A = np.vstack([ro_t, -ro_t])
    h = np.array([length / 2.0, width / 2.0, length / 2.0, width / 2.0])
    b = h + A @ np.array([x, y])
    return PolytopeHalfspaces(A=A, b=b)


def batch_rotations(phis: np.ndarray) -> np.ndarray:
    """(N,2,2) rotation matrices for a vector of headings."""
    c, s = np.cos(phis), np.sin(phis)
    R = np.empty((phis.shape[0], 2, 2))
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    return R


def batch_corners(poses: np.ndarray, length: float, width: float) -> np.ndarray:
    """(N,4,2) rectangle corners for poses (N,3) of (x, y, phi)."""
    poses = np.asarray(poses, dtype=float)
    R = batch_rotations(poses[:, 2])
    h = np.array(
        [
            [length / 2, width / 2],
            [-length / 2, width / 2],
            [-length / 2, -width / 2],
            [length / 2, -width / 2],
        ]
    )
    return poses[:, None, :2] + np.einsum("nij,kj->nki", R, h)


def _batch_vertex_edge(pts: np.ndarray, corners: np.ndarray):
    """Closest points between vertex sets (N,4,2) and rectangle edges.

    Returns squared distances (N,4,4) and foot points (N,4,4,2) for every
    vertex/edge combination.
    """
    a = corners
    b = np.roll(corners, -1, axis=1)
    ab = b - a  # (N,4,2)
    pa = pts[:, :, None, :] - a[:, None, :, :]  # (N,4v,4e,2)
    denom = np.einsum("nej,nej->ne", ab, ab)[:, None, :]
    t = np.clip(np.einsum("nvej,nej->nve", pa, ab) / denom, 0.0, 1.0)
    foot = a[:, None, :, :] + t[..., None] * ab[:, None, :, :]
    diff = pts[:, :, None, :] - foot
    return np.einsum("nvej,nvej->nve", diff, diff), foot


def batch_pair_geometry(
    poses1: np.ndarray,
    dims1: tuple[float, float],
    poses2: np.ndarray,
    dims2: tuple[float, float],
):
    """Distances and closest points for N rectangle pairs at once.

    poses are (N,3) arrays of (x, y, phi); dims are (length, width).
    Returns (dist (N,), p1 (N,2), p2 (N,2)); overlapping pairs get
    distance 0 with both points at the pair midpoint.
    """
    poses1 = np.atleast_2d(np.asarray(poses1, dtype=float))
    poses2 = np.atleast_2d(np.asarray(poses2, dtype=float))
    N = poses1.shape[0]
    c1 = batch_corners(poses1, *dims1)
    c2 = batch_corners(poses2, *dims2)
    R1 = batch_rotations(poses1[:, 2])
    R2 = batch_rotations(poses2[:, 2])
    axes = np.concatenate(
        [R1[:, :, 0][:, None], R1[:, :, 1][:, None], R2[:, :, 0][:, None], R2[:, :, 1][:, None]],
        axis=1,
    )  # (N,4,2)
    pr1 = np.einsum("nke,nae->nak", c1, axes)
    pr2 = np.einsum("nke,nae->nak", c2, axes)
    sep = (pr1.max(axis=2) < pr2.min(axis=2)) | (pr2.max(axis=2) < pr1.min(axis=2))
    overlap = ~sep.any(axis=1)

    d2_a, foot_a = _batch_vertex_edge(c1, c2)  # vertices of 1 vs edges of 2
    d2_b, foot_b = _batch_vertex_edge(c2, c1)  # vertices of 2 vs edges of 1
    d2 = np.concatenate([d2_a.reshape(N, 16), d2_b.reshape(N, 16)], axis=1)
    best = d2.argmin(axis=1)
    dist = np.sqrt(d2[np.arange(N), best])

    p1 = np.empty((N, 2))
    p2 = np.empty((N, 2))
    from_a = best < 16
    idx_a = best[from_a]
    rows_a = np.where(from_a)[0]
    p1[from_a] = c1[rows_a, idx_a // 4]
    p2[from_a] = foot_a.reshape(N, 16, 2)[rows_a, idx_a]
    idx_b = best[~from_a] - 16
    rows_b = np.where(~from_a)[0]
    p2[~from_a] = c2[rows_b, idx_b // 4]
    p1[~from_a] = foot_b.reshape(N, 16, 2)[rows_b, idx_b]

    if overlap.any():
        mid = 0.5 * (poses1[overlap, :2] + poses2[overlap, :2])
        dist[overlap] = 0.0
        p1[overlap] = mid
        p2[overlap] = mid
    return dist, p1, p2


def batch_distance(
    poses1: np.ndarray, dims1: tuple[float, float], poses2: np.ndarray, dims2: tuple[float, float]
) -> np.ndarray:
    return batch_pair_geometry(poses1, dims1, poses2, dims2)[0]


def penetration_depth(p1: PolytopeHalfspaces, p2: PolytopeHalfspaces) -> float:
    """Minimum translation distance separating two overlapping rectangles.

    Returns 0 for disjoint inputs.  For convex polygons the minimum
    translation axis is a face normal of one of the two shapes, so the
    SAT overlap minimum is exact.
    """
    c1, c2 = p1.corners(), p2.corners()
    best = np.inf
    for poly in (p1, p2):
        for axis in poly.rotation.T:
            lo1, hi1 = (c1 @ axis).min(), (c1 @ axis).max()
            lo2, hi2 = (c2 @ axis).min(), (c2 @ axis).max()
            overlap = min(hi1, hi2) - max(lo1, lo2)
            if overlap < 0.0:
                return 0.0
            best = min(best, overlap)
    return float(best)


def _pose_of(p: PolytopeHalfspaces) -> tuple[np.ndarray, tuple[float, float]]:
    R = p.rotation
    phi = float(np.arctan2(R[1, 0], R[0, 0]))
    c = p.center
    h = p.half_dims
    return np.array([c[0], c[1], phi]), (2.0 * float(h[0]), 2.0 * float(h[1]))


def closest_points(
    p1: PolytopeHalfspaces, p2: PolytopeHalfspaces
) -> tuple[float, np.ndarray, np.ndarray]:
    """(distance, point in P1, point in P2); distance 0 when intersecting.

    Exact for convex polygons: the minimum is attained at a vertex/edge
    pair, enumerated both ways.
    """
    pose1, dims1 = _pose_of(p1)
    pose2, dims2 = _pose_of(p2)
    dist, a, b = batch_pair_geometry(pose1[None, :], dims1, pose2[None, :], dims2)
    return float(dist[0]), a[0], b[0]


def polytope_distance_oracle(p1: PolytopeHalfspaces, p2: PolytopeHalfspaces) -> float:
    """Exact minimum Euclidean distance between the two sets (0 if they meet)."""
    return closest_points(p1, p2)[0]


@dataclass(frozen=True)
class DualCertificate:
    """Variables (gamma, mu, s) witnessing a lower distance bound."""

    gamma: np.ndarray
    mu: np.ndarray
    s: np.ndarray

    def residuals(self, p1: PolytopeHalfspaces, p2: PolytopeHalfspaces) -> dict[str, float]:
        return {
            "eq1": float(np.abs(p1.A.T @ self.gamma + self.s).max()),
            "eq2": float(np.abs(p2.A.T @ self.mu - self.s).max()),
            "nonneg": float(max(0.0, -min(self.gamma.min(), self.mu.min()))),
            "s_norm": float(max(0.0, np.hypot(*self.s) - 1.0)),
        }

    def is_feasible(
        self, p1: PolytopeHalfspaces, p2: PolytopeHalfspaces, tol: float = CERT_TOL
    ) -> bool:
        return all(v <= tol for v in self.residuals(p1, p2).values())


def dual_distance_bound(
    p1: PolytopeHalfspaces,
    p2: PolytopeHalfspaces,
    cert: DualCertificate,
    tol: float = CERT_TOL,
) -> float:
    """-(b1^T gamma + b2^T mu) for a feasible certificate.

    Raises InfeasibleCertificateError when the certificate violates its
    system beyond `tol`; a feasible certificate's bound never exceeds the
    exact distance (weak duality).
    """
    if not cert.is_feasible(p1, p2, tol):
        raise InfeasibleCertificateError(
            f"certificate residuals {cert.residuals(p1, p2)} exceed tol={tol}"
        )
    return float(-(p1.b @ cert.gamma + p2.b @ cert.mu))


def certificate_for_direction(
    p1: PolytopeHalfspaces, p2: PolytopeHalfspaces, s: np.ndarray
) -> DualCertificate:
    """Best feasible certificate whose separating direction is `s`.

    For a unit direction the multipliers minimizing b^T gamma subject to
    A1^T gamma = -s, gamma >= 0 are the positive/negative parts of the
    body-frame coordinates of s; the resulting bound equals the signed
    separation of the supporting hyperplanes along s.
    """
    s = np.asarray(s, dtype=float)
    n = float(np.hypot(*s))
    if n > 1.0:
        s = s / n
    w1 = p1.rotation.T @ (-s)
    w2 = p2.rotation.T @ s
    gamma = np.concatenate([np.maximum(w1, 0.0), np.maximum(-w1, 0.0)])
    mu = np.concatenate([np.maximum(w2, 0.0), np.maximum(-w2, 0.0)])
    return DualCertificate(gamma=gamma, mu=mu, s=s)


def batch_certificates(
    poses1: np.ndarray,
    dims1: tuple[float, float],
    poses2: np.ndarray,
    dims2: tuple[float, float],
) -> tuple[np.ndarray, list[DualCertificate]]:
    """Distances plus one certificate per pose pair.

    Disjoint pairs get the optimal certificate from the closest-point
    direction; overlapping pairs fall back to the center-separation
    direction, which stays feasible (with a nonpositive bound) so a
    downstream optimizer can push the pair apart.
    """
    poses1 = np.atleast_2d(np.asarray(poses1, dtype=float))
    poses2 = np.atleast_2d(np.asarray(poses2, dtype=float))
    dist, a, b = batch_pair_geometry(poses1, dims1, poses2, dims2)
    s = a - b
    bad = dist <= 0.0
    s[bad] = poses1[bad, :2] - poses2[bad, :2]
    norms = np.hypot(s[:, 0], s[:, 1])
    degenerate = norms <= 1e-12
    s[degenerate] = (1.0, 0.0)
    norms[degenerate] = 1.0
    s = s / norms[:, None]
    R1 = batch_rotations(poses1[:, 2])
    R2 = batch_rotations(poses2[:, 2])
    w1 = np.einsum("nji,nj->ni", R1, -s)
    w2 = np.einsum("nji,nj->ni", R2, s)
    gamma = np.concatenate([np.maximum(w1, 0.0), np.maximum(-w1, 0.0)], axis=1)
    mu = np.concatenate([np.maximum(w2, 0.0), np.maximum(-w2, 0.0)], axis=1)
    certs = [DualCertificate(gamma=gamma[i], mu=mu[i], s=s[i]) for i in range(poses1.shape[0])]
    return dist, certs


def solve_dual_certificate(
    p1: PolytopeHalfspaces, p2: PolytopeHalfspaces
) -> tuple[DualCertificate, float]:
    """Optimal certificate and its bound for two disjoint rectangles.

    The optimal separating direction joins the closest points, and the
    direction-optimal multipliers then achieve the exact distance (strong
    duality for convex sets).  Raises IntersectingPolytopesError when the
    sets meet.
    """
    d, x_star, y_star = closest_points(p1, p2)
    if d <= 0.0:
        raise IntersectingPolytopesError("sets intersect; no positive separating bound")
    s = (x_star - y_star) / d
    cert = certificate_for_direction(p1, p2, s)
    return cert, float(-(p1.b @ cert.gamma + p2.b @ cert.mu))

"""Independent oracles used by the test suite.

Each oracle deliberately avoids the code path it checks: Jacobians come
from central finite differences, distances from dense boundary sampling,
and QP solutions from exhaustive active-set enumeration (sound for
strictly convex problems, where any KKT point is the unique optimum).
"""

from __future__ import annotations

import itertools

import numpy as np

from muacp.dynamics import step_small_angle
from muacp.geometry import PolytopeHalfspaces, vehicle_polytope


def fd_jacobians(z, u, l_f, l_r, dt, h=1e-6):
    """Central-difference Jacobians of the small-angle step."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    A = np.zeros((4, 4))
    B = np.zeros((4, 2))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        A[:, i] = (
            step_small_angle(z + e, u, l_f, l_r, dt)
            - step_small_angle(z - e, u, l_f, l_r, dt)
        ) / (2 * h)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        B[:, i] = (
            step_small_angle(z, u + e, l_f, l_r, dt)
            - step_small_angle(z, u - e, l_f, l_r, dt)
        ) / (2 * h)
    return A, B


def boundary_points(poly: PolytopeHalfspaces, per_edge: int = 100) -> np.ndarray:
    """Dense sampling of the rectangle boundary."""
    c = poly.corners()
    pts = []
    t = np.linspace(0.0, 1.0, per_edge, endpoint=False)[:, None]
    for i in range(4):
        a, b = c[i], c[(i + 1) % 4]
        pts.append(a + t * (b - a))
    return np.vstack(pts)


def sampled_distance(p1: PolytopeHalfspaces, p2: PolytopeHalfspaces, per_edge: int = 100) -> float:
    """Brute-force min distance over densely sampled boundary points.

    Valid for disjoint rectangles (the closest pair then lies on the
    boundaries); accuracy is the sampling step times O(1).
    """
    b1 = boundary_points(p1, per_edge)
    b2 = boundary_points(p2, per_edge)
    d2 = ((b1[:, None, :] - b2[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.min()))


def random_rectangle(rng: np.random.Generator, span: float = 10.0) -> PolytopeHalfspaces:
    x, y = rng.uniform(-span, span, size=2)
    phi = rng.uniform(-np.pi, np.pi)
    length = rng.uniform(0.5, 6.0)
    width = rng.uniform(0.5, 4.0)
    return vehicle_polytope(x, y, phi, length, width)


def random_disjoint_pair(rng: np.random.Generator):
    from muacp.geometry import polytope_distance_oracle

    while True:
        p1 = random_rectangle(rng)
        p2 = random_rectangle(rng)
        if polytope_distance_oracle(p1, p2) > 1e-3:
            return p1, p2


def random_strictly_convex_qp(rng: np.random.Generator, n_max: int = 20, m_max: int = 40):
    """Random strictly convex QP with an enumerable optimal active set.

    Built backward from a random optimum: a few rows are made tight with
    strictly signed multipliers and the rest get positive slack, then q
    is chosen to satisfy stationarity.  Keeping the active cardinality
    small (<= 3) is what makes exhaustive active-set enumeration a
    practical oracle at these sizes.
    """
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    L = rng.normal(size=(n, n)) / np.sqrt(n)
    P = L @ L.T + 0.5 * np.eye(n)
    x_star = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    k = int(rng.choice([0, 1, 2, 3], p=[0.15, 0.40, 0.30, 0.15]))
    k = min(k, m, n)
    active = rng.choice(m, size=k, replace=False)
    ax = A @ x_star
    u = ax + rng.uniform(0.1, 1.5, size=m)
    l = np.full(m, -np.inf)
    two_sided = rng.random(m) < 0.3
    l[two_sided] = (ax - rng.uniform(0.1, 1.5, size=m))[two_sided]
    y = np.zeros(m)
    for i in active:
        if rng.random() < 0.5 and np.isfinite(l[i]):
            l[i] = ax[i]
            y[i] = -rng.uniform(0.1, 2.0)
        else:
            u[i] = ax[i]
            y[i] = rng.uniform(0.1, 2.0)
    q = -P @ x_star - A.T @ y
    return P, q, A, l, u


def active_set_qp_oracle(P, q, A, l, u, tol=1e-9, chunk=20000):
    """Exhaustive active-set enumeration for strictly convex QPs.

    Walks candidate active sets in order of increasing cardinality; for
    each, solves the equality-constrained KKT system and accepts the
    first candidate whose solution is primal feasible with correctly
    signed multipliers.  Strict convexity makes that point the unique
    global optimum, so early exit is sound.  Candidates of one
    cardinality are solved as a batched linear system for speed.
    """
    n = P.shape[0]
    m = A.shape[0]
    rows = [(i, +1) for i in range(m) if np.isfinite(u[i])]
    rows += [(i, -1) for i in range(m) if np.isfinite(l[i])]
    row_idx = np.array([r[0] for r in rows], dtype=int)
    row_side = np.array([r[1] for r in rows], dtype=int)
    bound = np.where(row_side > 0, u[row_idx], l[row_idx])

    def check_batch(combos: np.ndarray):
        """combos: (N, c) indices into `rows`; returns first optimal x."""
        c = combos.shape[1]
        if c:
            idx = row_idx[combos]  # (N, c)
            keep = np.array([len(set(r)) == len(r) for r in idx])
            combos = combos[keep]
            if combos.size == 0:
                return None
            idx = row_idx[combos]
        N = combos.shape[0]
        K = np.zeros((N, n + c, n + c))
        K[:, :n, :n] = P
        rhs = np.zeros((N, n + c))
        rhs[:, :n] = -q
        if c:
            G = A[idx]  # (N, c, n)
            K[:, n:, :n] = G
            K[:, :n, n:] = np.transpose(G, (0, 2, 1))
            rhs[:, n:] = bound[combos]
        try:
            sol = np.linalg.solve(K, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            sol = np.full((N, n + c), np.nan)
            for k in range(N):
                try:
                    sol[k] = np.linalg.solve(K[k], rhs[k])
                except np.linalg.LinAlgError:
                    pass
        x = sol[:, :n]
        lam = sol[:, n:]
        ok = np.all(np.isfinite(x), axis=1)
        if c:
            sides = row_side[combos]
            ok &= np.all((sides > 0) & (lam >= -tol) | (sides < 0) & (lam <= tol), axis=1)
        ax = x @ A.T
        ok &= np.all(ax <= u + 1e-8, axis=1) & np.all(ax >= l - 1e-8, axis=1)
        hits = np.where(ok)[0]
        return x[hits[0]] if hits.size else None

    max_card = min(n, len(rows))
    for card in range(0, max_card + 1):
        pending = []
        for combo in itertools.combinations(range(len(rows)), card):
            pending.append(combo)
            if len(pending) >= chunk:
                x = check_batch(np.array(pending, dtype=int).reshape(len(pending), card))
                if x is not None:
                    return x
                pending = []
        if pending:
            x = check_batch(np.array(pending, dtype=int).reshape(len(pending), card))
            if x is not None:
                return x
    raise RuntimeError("enumeration failed to locate a KKT point")

"""Dense convex QP solver: operator splitting with active-set polishing.

Solves
    minimize    0.5 x^T P x + q^T x
    subject to  l <= A x <= u
with P symmetric positive semidefinite.  Equality rows are encoded as
l == u.  The iteration is the standard over-relaxed splitting on the
normal-equations system (P + sigma I + A^T diag(rho) A); once residuals
are small the active set is read off the multipliers and the solution is
snapped to high accuracy by a regularized KKT solve with iterative
refinement, validated against the unregularized optimality system.

Everything is deterministic: identical inputs produce identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

_EQ_TOL = 1e-12
_INF = 1e30


@dataclass
class QpProblem:
    """Problem data; rows of A with l == u act as equalities."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self) -> None:
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.P.shape[0])
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        n = self.P.shape[0]
        if self.P.shape != (n, n) or self.q.shape != (n,):
            raise ValueError("P must be n x n and q length n")
        if not (self.A.shape[0] == self.l.shape[0] == self.u.shape[0]):
            raise ValueError("A, l, u row counts differ")
        asym = float(np.abs(self.P - self.P.T).max(initial=0.0))
        if asym > 1e-9:
            raise ValueError(f"P asymmetric by {asym:.2e}")
        self.P = 0.5 * (self.P + self.P.T)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    residuals: dict[str, float] = field(default_factory=dict)
    objective: float = np.nan
    polished: bool = False


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    sigma: float = 1e-6
    alpha: float = 1.6
    rho0: float = 0.1
    rho_eq_scale: float = 1e3
    max_iter: int = 20000
    check_every: int = 25
    adapt_every: int = 100
    polish_trigger: float = 1e-3
    eps_infeas: float = 1e-8


def _kkt_residuals(p: QpProblem, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """Stationarity / primal / dual-sign / complementarity, all inf-norm."""
    ax = p.A @ x
    r_stat = float(np.abs(p.P @ x + p.q + p.A.T @ y).max(initial=0.0))
    r_prim = float(
        max(
            np.maximum(p.l - ax, 0.0).max(initial=0.0),
            np.maximum(ax - p.u, 0.0).max(initial=0.0),
        )
    )
    eq = (p.u - p.l) <= _EQ_TOL
    r_dsign = 0.0
    r_comp = 0.0
    if p.m:
        # at inequality rows, positive duals pair with the upper bound and
        # negative duals with the lower bound
        gap_u = np.where(np.isfinite(p.u), np.abs(p.u - ax), np.inf)
        gap_l = np.where(np.isfinite(p.l), np.abs(ax - p.l), np.inf)
        comp = np.where(~eq & (y > 0), np.minimum(gap_u, np.abs(y)), 0.0)
        comp = np.maximum(comp, np.where(~eq & (y < 0), np.minimum(gap_l, np.abs(y)), 0.0))
        r_comp = float(comp.max(initial=0.0))
        bad_up = ~eq & ~np.isfinite(p.u) & (y > 0)
        bad_lo = ~eq & ~np.isfinite(p.l) & (y < 0)
        r_dsign = float(
            max(
                np.maximum(y, 0.0)[bad_up].max(initial=0.0),
                np.maximum(-y, 0.0)[bad_lo].max(initial=0.0),
            )
        )
    return {
        "stationarity": r_stat,
        "primal": r_prim,
        "dual_sign": r_dsign,
        "complementarity": r_comp,
    }


def _scales(p: QpProblem, x: np.ndarray, y: np.ndarray, ax: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    sp = max(
        float(np.abs(ax).max(initial=0.0)),
        float(np.abs(z).max(initial=0.0)),
    )
    sd = max(
        float(np.abs(p.P @ x).max(initial=0.0)),
        float(np.abs(p.q).max(initial=0.0)),
        float(np.abs(p.A.T @ y).max(initial=0.0)) if p.m else 0.0,
    )
    return sp, sd


def _polish(
    p: QpProblem, x: np.ndarray, y: np.ndarray, st: QpSettings
) -> tuple[np.ndarray, np.ndarray, dict[str, float]] | None:
    """Snap to the active set implied by y; None when the snap fails."""
    eq = (p.u - p.l) <= _EQ_TOL
    low = (~eq) & (y < -1e-12) & np.isfinite(p.l)
    upp = (~eq) & (y > 1e-12) & np.isfinite(p.u)
    act = np.where(eq | low | upp)[0]
    g = np.where(upp | eq, p.u, p.l)[act] if act.size else np.zeros(0)
    na = act.size
    n = p.n
    delta = 1e-9
    K = np.zeros((n + na, n + na))
    K[:n, :n] = p.P + delta * np.eye(n)
    if na:
        G = p.A[act]
        K[:n, n:] = G.T
        K[n:, :n] = G
        K[n:, n:] = -delta * np.eye(na)
    rhs = np.concatenate([-p.q, g])
    if not np.all(np.isfinite(rhs)):
        return None
    try:
        lu, piv = scipy.linalg.lu_factor(K, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    # two rounds of iterative refinement against the unregularized system
    for _ in range(2):
        xh, nu = sol[:n], sol[n:]
        if not np.all(np.isfinite(xh)):
            return None
        r_top = -p.q - p.P @ xh - (p.A[act].T @ nu if na else 0.0)
        r_bot = g - (p.A[act] @ xh if na else np.zeros(0))
        corr = scipy.linalg.lu_solve((lu, piv), np.concatenate([r_top, r_bot]), check_finite=False)
        sol = sol + corr
    xh, nu = sol[:n], sol[n:]
    if not np.all(np.isfinite(xh)):
        return None
    y_pol = np.zeros(p.m)
    if na:
        y_pol[act] = nu
    res = _kkt_residuals(p, xh, y_pol)
    return xh, y_pol, res


def _primal_infeasibility_certificate(
    p: QpProblem, dy: np.ndarray, eps: float
) -> bool:
    nrm = float(np.abs(dy).max(initial=0.0))
    if nrm <= eps:
        return False
    v = dy / nrm
    u_eff = np.where(np.isfinite(p.u), p.u, 0.0)
    l_eff = np.where(np.isfinite(p.l), p.l, 0.0)
    if np.any((~np.isfinite(p.u)) & (v > eps)) or np.any((~np.isfinite(p.l)) & (v < -eps)):
        return False
    lhs = float(u_eff @ np.maximum(v, 0.0) + l_eff @ np.minimum(v, 0.0))
    if lhs >= -eps:
        return False
    return float(np.abs(p.A.T @ v).max(initial=0.0)) <= eps * max(1.0, nrm)


def _dual_infeasibility_certificate(p: QpProblem, dx: np.ndarray, eps: float) -> bool:
    nrm = float(np.abs(dx).max(initial=0.0))
    if nrm <= eps:
        return False
    v = dx / nrm
    if float(p.q @ v) >= -eps:
        return False
    if float(np.abs(p.P @ v).max(initial=0.0)) > eps:
        return False
    av = p.A @ v
    ok_up = np.isfinite(p.u) | (av <= eps)
    ok_lo = np.isfinite(p.l) | (av >= -eps)
    fin_eq = (p.u - p.l) <= _EQ_TOL
    ok_eq = ~fin_eq | (np.abs(av) <= eps)
    return bool(np.all(ok_up & ok_lo & ok_eq))


def solve_qp(
    p: QpProblem,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
    settings: QpSettings | None = None,
) -> QpSolution:
    """Solve the QP; status is optimal, max_iter, or infeasible.

    At status `optimal` the returned (x, y) satisfy stationarity, primal
    and dual feasibility, and complementarity to eps_abs (inf-norm,
    relative scaling on the stationarity/primal residuals).
    """
    st = settings or QpSettings()
    n, m = p.n, p.m

    if m == 0:
        try:
            fac0 = scipy.linalg.cho_factor(p.P)
            x = scipy.linalg.cho_solve(fac0, -p.q)
            x = x + scipy.linalg.cho_solve(fac0, -(p.P @ x + p.q))
        except (np.linalg.LinAlgError, ValueError):
            x = np.linalg.lstsq(p.P, -p.q, rcond=None)[0]
        y = np.zeros(0)
        res = _kkt_residuals(p, x, y)
        ok = res["stationarity"] <= st.eps_abs * max(1.0, float(np.abs(p.q).max(initial=0.0)))
        return QpSolution(
            x=x, y=y, status=OPTIMAL if ok else MAX_ITER, iterations=0,
            residuals=res, objective=p.objective(x),
        )

    if np.any(p.l > p.u + _EQ_TOL):
        return QpSolution(
            x=np.zeros(n), y=np.zeros(m), status=INFEASIBLE, iterations=0,
            residuals={"bounds_gap": float((p.l - p.u).max())},
        )

    l = np.where(np.isfinite(p.l), p.l, -_INF)
    u = np.where(np.isfinite(p.u), p.u, _INF)
    eq = (u - l) <= _EQ_TOL

    rho = np.full(m, st.rho0)
    rho[eq] *= st.rho_eq_scale

    At = np.ascontiguousarray(p.A.T)

    def factor(rho_vec: np.ndarray):
        M = p.P + st.sigma * np.eye(n) + (At * rho_vec) @ p.A
        return scipy.linalg.cho_factor(M)

    fac = factor(rho)

    if warm_start is not None:
        x = np.array(warm_start[0], dtype=float).copy()
        y = np.array(warm_start[1], dtype=float).copy()
    else:
        x = np.zeros(n)
        y = np.zeros(m)
    z = np.clip(p.A @ x, l, u)

    best: QpSolution | None = None
    it = 0
    while it < st.max_iter:
        it += 1
        rhs = st.sigma * x - p.q + At @ (rho * z - y)
        x_t = scipy.linalg.cho_solve(fac, rhs)
        z_t = p.A @ x_t
        x_new = st.alpha * x_t + (1.0 - st.alpha) * x
        w = st.alpha * z_t + (1.0 - st.alpha) * z + y / rho
        z_new = np.clip(w, l, u)
        y_new = y + rho * (st.alpha * z_t + (1.0 - st.alpha) * z - z_new)
        dx = x_new - x
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % st.check_every == 0 or it == st.max_iter:
            ax = p.A @ x
            r_p = float(np.abs(ax - z).max(initial=0.0))
            r_d = float(np.abs(p.P @ x + p.q + At @ y).max(initial=0.0))
            sp, sd = _scales(p, x, y, ax, z)
            eps_p = st.eps_abs + st.eps_rel * sp
            eps_d = st.eps_abs + st.eps_rel * sd
            near = r_p <= max(eps_p, st.polish_trigger * (1.0 + sp)) and r_d <= max(
                eps_d, st.polish_trigger * (1.0 + sd)
            )
            if near:
                pol = _polish(p, x, y, st)
                if pol is not None:
                    xh, yh, res = pol
                    if (
                        res["stationarity"] <= st.eps_abs * (1.0 + sd)
                        and res["primal"] <= st.eps_abs * (1.0 + sp)
                        and res["dual_sign"] <= st.eps_abs
                        and res["complementarity"] <= st.eps_abs * (1.0 + sp)
                    ):
                        return QpSolution(
                            x=xh, y=yh, status=OPTIMAL, iterations=it,
                            residuals=res, objective=p.objective(xh), polished=True,
                        )
            if r_p <= eps_p and r_d <= eps_d:
                res = _kkt_residuals(p, x, y)
                return QpSolution(
                    x=x, y=y, status=OPTIMAL, iterations=it,
                    residuals=res, objective=p.objective(x),
                )
            if _primal_infeasibility_certificate(p, dy, st.eps_infeas):
                return QpSolution(
                    x=x, y=y, status=INFEASIBLE, iterations=it,
                    residuals={"primal_infeasible": 1.0},
                )
            if _dual_infeasibility_certificate(p, dx, st.eps_infeas):
                return QpSolution(
                    x=x, y=y, status=INFEASIBLE, iterations=it,
                    residuals={"dual_infeasible": 1.0},
                )

        if it % st.adapt_every == 0 and it < st.max_iter:
            ax = p.A @ x
            r_p = float(np.abs(ax - z).max(initial=0.0))
            r_d = float(np.abs(p.P @ x + p.q + At @ y).max(initial=0.0))
            sp, sd = _scales(p, x, y, ax, z)
            ratio = (r_p / (sp + 1e-12)) / (r_d / (sd + 1e-12) + 1e-16)
            if ratio > 5.0 or ratio < 0.2:
                scale = float(np.clip(np.sqrt(ratio), 1e-3, 1e3))
                rho = np.clip(rho * scale, 1e-6, 1e6)
                rho[eq] = np.clip(rho[eq], 1e-6 * st.rho_eq_scale, 1e6)
                fac = factor(rho)

    res = _kkt_residuals(p, x, y)
    best = QpSolution(
        x=x, y=y, status=MAX_ITER, iterations=it, residuals=res, objective=p.objective(x)
    )
    return best

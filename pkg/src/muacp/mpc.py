"""Per-vehicle receding-horizon subproblem and its convexified solve.

The subproblem tracks a reference under box, rate, and dynamics
constraints plus one collision row per neighbor per step built from dual
separation certificates.  The bilinear coupling between poses and
certificates is handled by alternation: with certificates fixed the
collision rows are affine in the state, and with states fixed the
certificates are refit in closed form from the exact separating
geometry.  States are condensed onto the input sequence, so each QP has
2H variables.

Collision rows are expressed in a frame centered between the two
vehicles; that keeps the first-order pose expansion tight (the remainder
scales with local coordinates, not absolute road position).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import linearize, rollout, step_small_angle
from .geometry import DualCertificate, batch_certificates, batch_distance
from .qp import INFEASIBLE, OPTIMAL, QpProblem, QpSettings, QpSolution, solve_qp
from .scenario import VehicleParams, Weights

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max_iter"
STATUS_UNSAFE = "unsafe"

N_OUTER = 10
OUTER_TOL = 1e-4
POST_CHECK_TOL = 1e-3
# planner-side cushion absorbing small-angle versus exact-plant mismatch
MODEL_MARGIN_PAD = 0.02
_BIG_BOUND = 1e5


@dataclass
class PlanSolution:
    """One vehicle's horizon plan plus solver diagnostics."""

    states: np.ndarray  # (H+1, 4), linear-model trajectory from z0
    inputs: np.ndarray  # (H, 2)
    input_rates: np.ndarray  # (H, 2)
    certificates: dict[int, list[DualCertificate]]
    objective: float
    status: str
    outer_iterations: int
    qp_iterations: int
    kkt_residuals: dict[str, float] = field(default_factory=dict)
    outer_residuals: list[float] = field(default_factory=list)
    min_clearance: float = np.inf  # min oracle distance minus margin
    qp_warm: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class _Condensed:
    """States written as z_s = T[s] + F[s] @ u for the stacked inputs."""

    T: np.ndarray  # (H+1, 4)
    F: np.ndarray  # (H+1, 4, 2H)

    def states(self, u_flat: np.ndarray) -> np.ndarray:
        return self.T + self.F @ u_flat


def _condense(z0: np.ndarray, lin) -> _Condensed:
    H = lin.horizon
    T = np.zeros((H + 1, 4))
    F = np.zeros((H + 1, 4, 2 * H))
    T[0] = z0
    for s in range(H):
        T[s + 1] = lin.A[s] @ T[s] + lin.c[s]
        F[s + 1] = lin.A[s] @ F[s]
        F[s + 1][:, 2 * s : 2 * s + 2] += lin.B[s]
    return _Condensed(T=T, F=F)


def _difference_matrix(H: int) -> np.ndarray:
    D = np.eye(2 * H)
    for s in range(1, H):
        D[2 * s : 2 * s + 2, 2 * (s - 1) : 2 * s] -= np.eye(2)
    return D


def _batch_halfspace_normals(phis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H,4,2) face-normal stacks [R^T; -R^T] and their phi derivatives."""
    from .geometry import batch_rotations

    R = batch_rotations(phis)
    Rt = R.transpose(0, 2, 1)
    A = np.concatenate([Rt, -Rt], axis=1)
    c, s = np.cos(phis), np.sin(phis)
    dR = np.empty_like(R)
    dR[:, 0, 0] = -s
    dR[:, 0, 1] = -c
    dR[:, 1, 0] = c
    dR[:, 1, 1] = -s
    dRt = dR.transpose(0, 2, 1)
    dA = np.concatenate([dRt, -dRt], axis=1)
    return A, dA


def _collision_rows(
    gammas: np.ndarray,
    mus: np.ndarray,
    z_bars: np.ndarray,
    nbrs: np.ndarray,
    params: VehicleParams,
    neighbor_params: VehicleParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Affine rows  coeff_s . z_s <= rhs_s  enforcing the dual bound.

    With certificates fixed, the bound -(b_k^T gamma + b_j^T mu) is
    linearized in the ego pose around z_bars; a shared local origin at
    each pair midpoint keeps the expansion remainder second order in the
    pose step.  All horizon steps are built at once.
    """
    h_k = np.array([params.length / 2, params.width / 2] * 2)
    h_j = np.array([neighbor_params.length / 2, neighbor_params.width / 2] * 2)
    o = 0.5 * (z_bars[:, :2] + nbrs[:, :2])
    p_loc = z_bars[:, :2] - o
    A_k, dA_k = _batch_halfspace_normals(z_bars[:, 2])
    g_val = np.einsum("hi,hi->h", gammas, h_k[None, :] + np.einsum("hij,hj->hi", A_k, p_loc))
    grad_p = np.einsum("hij,hi->hj", A_k, gammas)
    grad_phi = np.einsum("hi,hij,hj->h", gammas, dA_k, p_loc)
    A_j, _ = _batch_halfspace_normals(nbrs[:, 2])
    b_j = h_j[None, :] + np.einsum("hij,hj->hi", A_j, nbrs[:, :2] - o)
    coeffs = np.zeros((z_bars.shape[0], 4))
    coeffs[:, 0] = grad_p[:, 0]
    coeffs[:, 1] = grad_p[:, 1]
    coeffs[:, 2] = grad_phi
    # g(z) ~= g_val + coeff . (z - z_bar); require g(z) <= -d - mu.b_j
    rhs_const = -np.einsum("hi,hi->h", mus, b_j) - g_val + np.einsum("hi,hi->h", coeffs, z_bars)
    return coeffs, rhs_const


def build_subproblem(
    params: VehicleParams,
    weights: Weights,
    dt: float,
    z0: np.ndarray,
    u_prev: np.ndarray,
    reference: np.ndarray,
    lin_states: np.ndarray,
    lin_inputs: np.ndarray,
    neighbors: dict[int, np.ndarray],
    neighbor_params: dict[int, VehicleParams],
    margins: dict[int, float | np.ndarray],
    certs: dict[int, list[DualCertificate]],
    alpha_t: float = 0.0,
    reg_target: np.ndarray | None = None,
) -> tuple[QpProblem, _Condensed]:
    """Assemble the condensed QP for one vehicle.

    `reference` is (H+1,4) for steps 0..H; `neighbors[j]` predicted
    states (H+1,4); `certs[j]` one certificate per step 1..H; margins
    may be scalars or per-step profiles of length H.  The regularizer
    adds alpha * ||z_1 - reg_target||^2 when a target is given, entering
    as a quadratic-plus-linear correction on the first predicted state.
    """
    H = lin_inputs.shape[0]
    lin = linearize(lin_states, lin_inputs, params.lf, params.lr, dt)
    cond = _condense(z0, lin)
    Fz = cond.F[1:].reshape(4 * H, 2 * H)  # rows for z_1..z_H
    Tz = cond.T[1:].reshape(4 * H)
    ref = reference[1 : H + 1].reshape(4 * H)

    Qz = np.tile(np.asarray(weights.state, dtype=float), H)
    Qu = np.tile(np.asarray(weights.input, dtype=float), H)
    Qdu = np.tile(np.asarray(weights.input_rate, dtype=float), H)
    D = _difference_matrix(H)

    P = 2.0 * ((Fz.T * Qz) @ Fz + np.diag(Qu) + (D.T * Qdu) @ D)
    q = 2.0 * (Fz.T @ (Qz * (Tz - ref)))
    du_const = np.zeros(2 * H)
    du_const[:2] = np.asarray(u_prev, dtype=float)
    q -= 2.0 * (D.T @ (Qdu * du_const))

    if alpha_t > 0.0 and reg_target is not None:
        F1 = cond.F[1]  # (4, 2H)
        T1 = cond.T[1]
        P += 2.0 * alpha_t * (F1.T @ F1)
        q += 2.0 * alpha_t * (F1.T @ (T1 - np.asarray(reg_target, dtype=float)))

    rows: list[np.ndarray] = []
    lows: list[np.ndarray] = []
    upps: list[np.ndarray] = []

    # state bounds (skip effectively unbounded components)
    z_min = np.tile(np.asarray(params.z_min, dtype=float), H) - Tz
    z_max = np.tile(np.asarray(params.z_max, dtype=float), H) - Tz
    keep = ~(
        (np.tile(np.asarray(params.z_min), H) <= -_BIG_BOUND)
        & (np.tile(np.asarray(params.z_max), H) >= _BIG_BOUND)
    )
    rows.append(Fz[keep])
    lows.append(z_min[keep])
    upps.append(z_max[keep])

    # input bounds
    rows.append(np.eye(2 * H))
    lows.append(np.tile(np.asarray(params.u_min, dtype=float), H))
    upps.append(np.tile(np.asarray(params.u_max, dtype=float), H))

    # input-rate bounds
    rows.append(D)
    lo_rate = np.tile(np.asarray(params.du_min, dtype=float), H)
    hi_rate = np.tile(np.asarray(params.du_max, dtype=float), H)
    lo_rate[:2] += np.asarray(u_prev, dtype=float)
    hi_rate[:2] += np.asarray(u_prev, dtype=float)
    lows.append(lo_rate)
    upps.append(hi_rate)

    # collision rows, one per neighbor per step
    for j in sorted(neighbors):
        pred = neighbors[j]
        pair_certs = certs[j]
        margin = np.broadcast_to(np.asarray(margins[j], dtype=float), (H,)) + MODEL_MARGIN_PAD
        gammas = np.array([c.gamma for c in pair_certs])
        mus = np.array([c.mu for c in pair_certs])
        coeffs, rhs_const = _collision_rows(
            gammas, mus, lin_states[1 : H + 1], pred[1 : H + 1], params, neighbor_params[j]
        )
        rows_u = np.einsum("hi,hiu->hu", coeffs, cond.F[1:])
        rhs = -margin + rhs_const - np.einsum("hi,hi->h", coeffs, cond.T[1:])
        rows.append(rows_u)
        lows.append(np.full(H, -np.inf))
        upps.append(rhs)

    A = np.vstack(rows)
    l = np.concatenate(lows)
    u = np.concatenate(upps)
    return QpProblem(P=P, q=q, A=A, l=l, u=u), cond


def evaluate_objective(
    states: np.ndarray,
    inputs: np.ndarray,
    u_prev: np.ndarray,
    reference: np.ndarray,
    weights: Weights,
    alpha_t: float = 0.0,
    reg_target: np.ndarray | None = None,
) -> float:
    """Direct evaluation of the tracking + effort + regularizer objective."""
    H = inputs.shape[0]
    Qz = np.asarray(weights.state, dtype=float)
    Qu = np.asarray(weights.input, dtype=float)
    Qdu = np.asarray(weights.input_rate, dtype=float)
    dz = states[1 : H + 1] - reference[1 : H + 1]
    J = float(np.sum(dz * dz * Qz))
    J += float(np.sum(inputs * inputs * Qu))
    du = np.diff(np.vstack([u_prev, inputs]), axis=0)
    J += float(np.sum(du * du * Qdu))
    if alpha_t > 0.0 and reg_target is not None:
        gap = states[1] - np.asarray(reg_target, dtype=float)
        J += alpha_t * float(gap @ gap)
    return J


def _refit_certificates(
    states: np.ndarray,
    neighbors: dict[int, np.ndarray],
    params: VehicleParams,
    neighbor_params: dict[int, VehicleParams],
) -> dict[int, list[DualCertificate]]:
    """Best certificates against the predicted neighbor polytopes.

    Disjoint poses get the exact optimal certificate; overlapping poses
    fall back to the center-separation direction, which stays feasible
    and lets the next QP push the bound back above the margin.
    """
    H = states.shape[0] - 1
    dims = (params.length, params.width)
    out: dict[int, list[DualCertificate]] = {}
    for j, pred in neighbors.items():
        pj = neighbor_params[j]
        _, certs = batch_certificates(
            states[1 : H + 1, :3], dims, pred[1 : H + 1, :3], (pj.length, pj.width)
        )
        out[j] = certs
    return out


def solve_rcmpc(
    params: VehicleParams,
    weights: Weights,
    dt: float,
    z0: np.ndarray,
    u_prev: np.ndarray,
    reference: np.ndarray,
    neighbors: dict[int, np.ndarray],
    neighbor_params: dict[int, VehicleParams],
    margins: dict[int, float | np.ndarray],
    alpha_t: float = 0.0,
    reg_target: np.ndarray | None = None,
    warm: PlanSolution | None = None,
    qp_settings: QpSettings | None = None,
) -> PlanSolution:
    """Alternating sequential solve of one vehicle's subproblem.

    Each outer pass fixes the certificates and solves the condensed QP,
    refits certificates along the new trajectory, and re-linearizes;
    it stops when the trajectory settles below OUTER_TOL or after
    N_OUTER passes.  The final plan is re-validated against every
    neighbor with the exact distance oracle.
    """
    H = reference.shape[0] - 1
    z0 = np.asarray(z0, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)

    if warm is not None and warm.inputs.shape[0] == H:
        u_bar = np.vstack([warm.inputs[1:], warm.inputs[-1:]])
    else:
        u_bar = np.zeros((H, 2))
    z_bar = rollout(z0, u_bar, params.lf, params.lr, dt)
    certs = _refit_certificates(z_bar, neighbors, params, neighbor_params)

    qp_warm = warm.qp_warm if warm is not None else None
    total_qp_iters = 0
    outer_residuals: list[float] = []
    last_sol: QpSolution | None = None
    status = STATUS_MAX_ITER
    for outer in range(1, N_OUTER + 1):
        prob, cond = build_subproblem(
            params, weights, dt, z0, u_prev, reference, z_bar, u_bar,
            neighbors, neighbor_params, margins, certs, alpha_t, reg_target,
        )
        if qp_warm is not None and qp_warm[0].shape == prob.q.shape and qp_warm[1].shape[0] == prob.m:
            sol = solve_qp(prob, warm_start=qp_warm, settings=qp_settings)
        else:
            sol = solve_qp(prob, settings=qp_settings)
        total_qp_iters += sol.iterations
        if sol.status == INFEASIBLE:
            return PlanSolution(
                states=z_bar, inputs=u_bar, input_rates=np.diff(np.vstack([u_prev, u_bar]), axis=0),
                certificates=certs, objective=np.inf, status=STATUS_INFEASIBLE,
                outer_iterations=outer, qp_iterations=total_qp_iters,
                kkt_residuals=sol.residuals, outer_residuals=outer_residuals,
            )
        last_sol = sol
        u_new = sol.x.reshape(H, 2)
        z_new = cond.states(sol.x)
        change = max(
            float(np.abs(z_new - z_bar).max(initial=0.0)),
            float(np.abs(u_new - u_bar).max(initial=0.0)),
        )
        outer_residuals.append(change)
        z_bar, u_bar = z_new, u_new
        qp_warm = (sol.x, sol.y)
        certs = _refit_certificates(z_bar, neighbors, params, neighbor_params)
        if change <= OUTER_TOL:
            status = STATUS_OPTIMAL if sol.status == OPTIMAL else STATUS_MAX_ITER
            break
    else:
        status = STATUS_OPTIMAL if (last_sol is not None and last_sol.status == OPTIMAL) else STATUS_MAX_ITER

    min_clearance = np.inf
    for j, pred in neighbors.items():
        pj = neighbor_params[j]
        dist = batch_distance(
            z_bar[1:, :3], (params.length, params.width), pred[1 : H + 1, :3], (pj.length, pj.width)
        )
        margin = np.broadcast_to(np.asarray(margins[j], dtype=float), (H,))
        min_clearance = min(min_clearance, float((dist - margin).min()))
    if neighbors and min_clearance < -POST_CHECK_TOL:
        status = STATUS_UNSAFE

    objective = evaluate_objective(
        z_bar, u_bar, u_prev, reference, weights, alpha_t, reg_target
    )
    return PlanSolution(
        states=z_bar,
        inputs=u_bar,
        input_rates=np.diff(np.vstack([u_prev, u_bar]), axis=0),
        certificates=certs,
        objective=objective,
        status=status,
        outer_iterations=len(outer_residuals),
        qp_iterations=total_qp_iters,
        kkt_residuals=last_sol.residuals if last_sol is not None else {},
        outer_residuals=outer_residuals,
        min_clearance=float(min_clearance),
        qp_warm=qp_warm,
    )

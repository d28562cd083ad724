"""Per-step orchestration: broadcasts, per-vehicle solves, baseline modes.

Modes:

- ``muacp``  fused perception, confidence-driven margins, motion
  regularizer, broadcast-informed neighbor predictions with
  constant-velocity fallback on lost links.
- ``tcm``    cooperative but uncertainty-blind: raw ego perception,
  fixed d_min margins, no regularizer.
- ``sem``    single-ego baseline: no V2V at all, so neighbors are
  constant-velocity extrapolations of the ego's own observations.

Each step is one synchronous round: every vehicle plans against the same
broadcast snapshot, so solves are order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import step_small_angle
from .geometry import batch_distance
from .mpc import PlanSolution, solve_rcmpc
from .qp import QpSettings
from .scenario import ReferenceTrajectory, ScenarioConfig
from .uncertainty import UncertaintyContext

# neighbors whose predicted centers never come near the ego within the
# horizon produce no collision rows; envelope below is conservative
PRUNE_SLACK = 3.0

# when a perception jump reports clearance already below the target
# margin, demanding the full margin at step one is dynamically
# unreachable and would only force a backup; instead the margin profile
# asks clearance to recover toward the target at this rate
RECOVERY_RATE = 1.0  # m/s
RECOVERY_SLACK = 0.1  # m, non-worsening allowance at the first step
# cushion between the braking-envelope clearance and the margin it caps,
# absorbing linearization slop so the max-braking trajectory stays a
# feasible point of the assembled QP
BRAKE_ENVELOPE_PAD = 0.15


@dataclass
class PlatoonPlanStep:
    """All vehicles' plans for one control step."""

    step: int
    plans: list[PlanSolution]
    applied: np.ndarray  # (K,2) first input per vehicle
    predicted_next: np.ndarray  # (K,4) planner-model propagation of applied
    delivered: np.ndarray  # (K,K) connectivity used for the broadcast
    neighbor_predictions: list[dict[int, np.ndarray]]
    margins_used: list[dict[int, float]]
    flagged: np.ndarray  # (K,) plan not usable, backup required


def _cv_extrapolate(state: np.ndarray, H: int, dt: float) -> np.ndarray:
    """Constant-velocity straight-line prediction from one state."""
    out = np.tile(np.asarray(state, dtype=float), (H + 1, 1))
    steps = np.arange(H + 1) * dt
    out[:, 0] = state[0] + state[3] * np.cos(state[2]) * steps
    out[:, 1] = state[1] + state[3] * np.sin(state[2]) * steps
    return out


def _reference_shifted(
    refs: ReferenceTrajectory, j: int, t: int, H: int, anchor: np.ndarray
) -> np.ndarray:
    """Neighbor reference window shifted to pass through its anchor state."""
    window = refs.window(j, t, H + 1).copy()
    offset = np.asarray(anchor, dtype=float) - window[0]
    return window + offset


def _neighbor_prediction(
    mode: str,
    k: int,
    j: int,
    t: int,
    H: int,
    dt: float,
    refs: ReferenceTrajectory,
    truth: np.ndarray,
    ctx: UncertaintyContext,
) -> np.ndarray:
    """Predicted neighbor trajectory as seen by vehicle k.

    The single-ego baseline has no V2V at all, so neighbors extrapolate
    at constant velocity from its own observations.  Cooperative modes
    know the shared formation plan; each step's broadcast refreshes the
    anchor with the neighbor's actual state, and a lost link degrades the
    anchor to the (fused or raw) perceived state instead.
    """
    if mode == "sem":
        return _cv_extrapolate(ctx.observations[(k, j)].state, H, dt)
    if ctx.connectivity[k, j]:
        anchor = truth[j]
    elif mode == "muacp":
        anchor = ctx.fused[(k, j)].observation.state
    else:
        anchor = ctx.observations[(k, j)].state
    return _reference_shifted(refs, j, t, H, anchor)


def _prune_neighbors(
    k: int,
    ego_state: np.ndarray,
    predictions: dict[int, np.ndarray],
    cfg: ScenarioConfig,
    margins: dict[int, float | np.ndarray],
    H: int,
) -> dict[int, np.ndarray]:
    keep: dict[int, np.ndarray] = {}
    pk = cfg.vehicles[k].params
    ego_diag = 0.5 * float(np.hypot(pk.length, pk.width))
    reach = float(ego_state[3]) * H * cfg.dt + ego_diag
    for j, pred in predictions.items():
        pj = cfg.vehicles[j].params
        j_diag = 0.5 * float(np.hypot(pj.length, pj.width))
        centers = pred[:, :2] - ego_state[:2]
        closest = float(np.hypot(centers[:, 0], centers[:, 1]).min())
        if closest <= reach + j_diag + float(np.max(margins[j])) + PRUNE_SLACK:
            keep[j] = pred
    return keep


def _braking_rollout(z0: np.ndarray, u_prev: np.ndarray, params, H: int, dt: float) -> np.ndarray:
    """Max-braking, straightening trajectory under the input-rate limits.

    This is a feasible input profile for any subproblem, so any margin at
    or below its clearance keeps the QP solvable.
    """
    out = np.zeros((H + 1, 4))
    out[0] = z0
    z = np.array(z0, dtype=float)
    a, d = float(u_prev[0]), float(u_prev[1])
    for s in range(H):
        a = max(a + params.du_min[0], params.u_min[0])
        d = max(0.0, d + params.du_min[1]) if d > 0 else min(0.0, d + params.du_max[1])
        z = step_small_angle(z, np.array([a, d]), params.lf, params.lr, dt)
        if z[3] < 0.0:
            z[3] = 0.0
        out[s + 1] = z
    return out


def _margin_profile(
    target: float,
    ego_state: np.ndarray,
    ego_brake: np.ndarray,
    ego_params,
    pred: np.ndarray,
    pred_params,
    H: int,
    dt: float,
) -> float | np.ndarray:
    """Per-step margin: the target wherever it is dynamically reachable.

    Two relaxations keep the subproblem solvable without giving up the
    target where physics allows it: a recovery ramp when the perceived
    clearance already sits below the target (perception jumps cannot be
    undone instantly), and a cap at the max-braking clearance envelope
    when even full braking cannot hold the target against the predicted
    neighbor motion.
    """
    dims_e = (ego_params.length, ego_params.width)
    dims_p = (pred_params.length, pred_params.width)
    c0 = float(batch_distance(ego_state[None, :3], dims_e, pred[0][None, :3], dims_p)[0])
    c_brake = batch_distance(ego_brake[1 : H + 1, :3], dims_e, pred[1 : H + 1, :3], dims_p)
    profile = np.full(H, float(target))
    if float(c_brake.min()) < target + BRAKE_ENVELOPE_PAD:
        profile = np.minimum(profile, np.maximum(c_brake - BRAKE_ENVELOPE_PAD, 0.0))
    if c0 < target + RECOVERY_SLACK:
        base = max(min(c0 - RECOVERY_SLACK, target), 0.0)
        ramp = base + RECOVERY_RATE * dt * np.arange(1, H + 1)
        profile = np.minimum(profile, ramp)
    if np.all(profile >= target):
        return target
    return profile


def plan_step(
    cfg: ScenarioConfig,
    refs: ReferenceTrajectory,
    t: int,
    truth: np.ndarray,
    u_prev: np.ndarray,
    ctx: UncertaintyContext,
    prev_plans: list[PlanSolution | None],
    commanded: np.ndarray,
    mode: str | None = None,
    qp_settings: QpSettings | None = None,
) -> PlatoonPlanStep:
    """One synchronous planning round at step t.

    `truth` is (K,4); `u_prev` the last applied inputs (K,2);
    `commanded` the disturbance-free propagation of the previous step
    (used for the motion-mismatch regularizer target).
    """
    mode = mode or cfg.mode
    K = cfg.n_vehicles
    H = cfg.mpc_steps
    plans: list[PlanSolution] = []
    applied = np.zeros((K, 2))
    predicted_next = np.zeros((K, 4))
    flagged = np.zeros(K, dtype=bool)
    all_predictions: list[dict[int, np.ndarray]] = []
    all_margins: list[dict[int, float]] = []

    for k in range(K):
        veh = cfg.vehicles[k]
        predictions = {
            j: _neighbor_prediction(mode, k, j, t, H, cfg.dt, refs, truth, ctx)
            for j in range(K)
            if j != k
        }
        if mode == "muacp":
            targets = {j: ctx.margins[(k, j)] for j in predictions}
            alpha_t = ctx.alpha_t
        else:
            targets = {j: cfg.d_min for j in predictions}
            alpha_t = 0.0
        ego_brake = _braking_rollout(truth[k], u_prev[k], veh.params, H, cfg.dt)
        margins = {
            j: _margin_profile(
                targets[j], truth[k], ego_brake, veh.params,
                predictions[j], cfg.vehicles[j].params, H, cfg.dt,
            )
            for j in predictions
        }

        reg_target = None
        prev = prev_plans[k] if prev_plans else None
        if (
            mode == "muacp"
            and alpha_t > 0.0
            and prev is not None
            and prev.states.shape[0] >= 3
            and float(np.abs(ctx.mismatch[k]).max()) > 0.0
        ):
            reg_target = prev.states[2] - ctx.mismatch[k]

        active = _prune_neighbors(k, truth[k], predictions, cfg, margins, H)
        plan = solve_rcmpc(
            params=veh.params,
            weights=cfg.weights,
            dt=cfg.dt,
            z0=truth[k],
            u_prev=u_prev[k],
            reference=refs.window(k, t, H + 1),
            neighbors=active,
            neighbor_params={j: cfg.vehicles[j].params for j in active},
            margins={j: margins[j] for j in active},
            alpha_t=alpha_t,
            reg_target=reg_target,
            warm=prev,
            qp_settings=qp_settings,
        )
        plans.append(plan)
        applied[k] = plan.inputs[0]
        predicted_next[k] = step_small_angle(
            truth[k], plan.inputs[0], veh.params.lf, veh.params.lr, cfg.dt
        )
        flagged[k] = plan.status != "optimal"
        all_predictions.append(predictions)
        all_margins.append(margins)

    return PlatoonPlanStep(
        step=t,
        plans=plans,
        applied=applied,
        predicted_next=predicted_next,
        delivered=ctx.connectivity.copy(),
        neighbor_predictions=all_predictions,
        margins_used=all_margins,
        flagged=flagged,
    )

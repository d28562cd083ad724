"""Closed-loop episodes: plant stepping, pre-collision checks, backup
policy, collision detection, and metric aggregation.

The plant is the exact bicycle model plus a rain-dependent slip that
scales lateral displacement and heading change.  Every step: sample the
uncertainty context, run one synchronous planning round, review each
vehicle's plan with the onboard pre-collision checker, apply either the
planned or the backup input under rate limits, then advance the plant.

Failures are data: collisions and unreached lanes are recorded in the
episode result rather than raised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import step_exact, step_small_angle
from .geometry import batch_distance, penetration_depth, polytope_distance_oracle, vehicle_polytope
from .planner import PlatoonPlanStep, plan_step
from .qp import QpSettings
from .scenario import ReferenceTrajectory, ScenarioConfig, generate_reference
from .uncertainty import UncertaintyContext, apply_slip, build_context, motion_mismatch, rain_slip

N_CHECK = 10
LATERAL_SETTLE = 0.2  # m, lateral error defining "reached the target lane"


@dataclass
class CollisionEvent:
    pair: tuple[int, int]
    step: int
    penetration: float


@dataclass
class EpisodeResult:
    """Everything produced by one closed-loop episode."""

    success: bool
    collisions: list[CollisionEvent]
    navigation_time: float | None  # seconds; None when a lane was never settled
    mean_velocity: np.ndarray  # (K,)
    mean_heading: np.ndarray  # (K,)
    states: np.ndarray  # (T+1, K, 4)
    inputs: np.ndarray  # (T, K, 2)
    backup_count: int
    backup_steps: np.ndarray  # (T, K) bool
    statuses: list[list[str]]
    margins_trace: list[dict[str, float]]
    connectivity_trace: np.ndarray  # (T, K, K)
    alpha_trace: np.ndarray  # (T,)
    rain_trace: np.ndarray  # (T,)
    min_pair_distance: float
    seed: int
    mode: str


def _rate_clip(u: np.ndarray, u_prev: np.ndarray, params) -> np.ndarray:
    lo = np.asarray(u_prev) + np.asarray(params.du_min)
    hi = np.asarray(u_prev) + np.asarray(params.du_max)
    u = np.clip(u, lo, hi)
    return np.clip(u, params.u_min, params.u_max)


def backup_policy(
    k: int,
    truth: np.ndarray,
    cfg: ScenarioConfig,
    u_prev: np.ndarray,
    perceived: dict[int, np.ndarray],
) -> np.ndarray:
    """Brake hard while steering to the current lane center; switch to
    gap-keeping car-following when a leader occupies the same lane."""
    veh = cfg.vehicles[k]
    z = truth[k]
    v = float(z[3])
    if v <= 1e-9:
        return _rate_clip(np.zeros(2), u_prev, veh.params)

    lane = cfg.road.nearest_lane(z[1])
    y_c = cfg.road.lane_center(lane)
    steer = -0.6 * float(z[2]) - 0.25 * (float(z[1]) - y_c) / max(v, 1.0)

    accel = float(veh.params.u_min[0])
    leader_gap = np.inf
    leader_v = 0.0
    for j, st in perceived.items():
        if cfg.road.nearest_lane(float(st[1])) != lane:
            continue
        gap = float(st[0]) - float(z[0])
        if 0.0 < gap < leader_gap:
            leader_gap = gap
            leader_v = float(st[3])
    follow_range = cfg.d_min + veh.params.length + 25.0
    if leader_gap < follow_range:
        desired = cfg.d_min + veh.params.length
        accel = 0.8 * (leader_gap - desired) + 1.2 * (leader_v - v)

    u = np.array([accel, steer])
    return _rate_clip(u, u_prev, veh.params)


def pre_collision_check(
    k: int,
    plan_inputs: np.ndarray,
    truth_k: np.ndarray,
    predictions: dict[int, np.ndarray],
    cfg: ScenarioConfig,
    inflation: dict[int, float],
) -> bool:
    """True when the plan survives an N_CHECK-step forward review.

    The ego plant is rolled under the planned inputs and compared to the
    neighbor predictions; any pairwise distance below the worst-case
    inflation flags the vehicle.
    """
    veh = cfg.vehicles[k]
    n = min(N_CHECK, plan_inputs.shape[0])
    rolled = np.zeros((n + 1, 4))
    rolled[0] = truth_k
    for s in range(n):
        rolled[s + 1] = step_exact(rolled[s], plan_inputs[s], veh.params.lf, veh.params.lr, cfg.dt)
    dims = (veh.params.length, veh.params.width)
    for j, pred in predictions.items():
        pj = cfg.vehicles[j].params
        m = min(n, pred.shape[0] - 1)
        if m < 1:
            continue
        centers = pred[1 : m + 1, :2] - rolled[1 : m + 1, :2]
        closest = float(np.hypot(centers[:, 0], centers[:, 1]).min())
        if closest > veh.params.length + pj.length + inflation[j] + 1.0:
            continue
        dist = batch_distance(rolled[1 : m + 1, :3], dims, pred[1 : m + 1, :3], (pj.length, pj.width))
        if float(dist.min()) < inflation[j]:
            return False
    return True


def _perceived_states(ctx: UncertaintyContext, k: int, K: int, mode: str) -> dict[int, np.ndarray]:
    out = {}
    for j in range(K):
        if j == k:
            continue
        if mode == "muacp":
            out[j] = ctx.fused[(k, j)].observation.state
        else:
            out[j] = ctx.observations[(k, j)].state
    return out


def run_episode(
    cfg: ScenarioConfig,
    seed: int | None = None,
    mode: str | None = None,
    refs: ReferenceTrajectory | None = None,
    qp_settings: QpSettings | None = None,
) -> EpisodeResult:
    """Run one closed-loop episode; deterministic for a given config+seed."""
    seed = cfg.seed if seed is None else int(seed)
    mode = mode or cfg.mode
    refs = refs or generate_reference(cfg)
    K = cfg.n_vehicles
    T = cfg.steps
    d_max = np.array([v.params.d_max for v in cfg.vehicles])

    truth = cfg.initial_states()
    u_prev = np.zeros((K, 2))
    commanded = truth.copy()
    prev_plans: list = [None] * K

    pairs = [(a, b) for a in range(K) for b in range(a + 1, K)]
    pair_a = np.array([p[0] for p in pairs], dtype=int)
    pair_b = np.array([p[1] for p in pairs], dtype=int)
    dims_all = {(v.params.length, v.params.width) for v in cfg.vehicles}
    uniform_dims = len(dims_all) == 1
    dims0 = next(iter(dims_all))

    states = np.zeros((T + 1, K, 4))
    states[0] = truth
    inputs = np.zeros((T, K, 2))
    backup_steps = np.zeros((T, K), dtype=bool)
    statuses: list[list[str]] = []
    margins_trace: list[dict[str, float]] = []
    connectivity = np.zeros((T, K, K), dtype=np.int8)
    alpha_trace = np.zeros(T)
    rain_trace = np.zeros(T)
    collisions: list[CollisionEvent] = []
    collided_pairs: set[tuple[int, int]] = set()
    min_pair_distance = np.inf

    for t in range(T):
        mismatch = np.array([motion_mismatch(commanded[k], truth[k]) for k in range(K)])
        ctx = build_context(truth, cfg.uncertainty, cfg.d_min, d_max, seed, t, mismatch)
        step = plan_step(
            cfg, refs, t, truth, u_prev, ctx, prev_plans, commanded,
            mode=mode, qp_settings=qp_settings,
        )
        statuses.append([p.status for p in step.plans])
        margins_trace.append(
            {
                f"{k}-{j}": float(np.max(m))
                for k, ms in enumerate(step.margins_used)
                for j, m in ms.items()
            }
        )
        connectivity[t] = ctx.connectivity
        alpha_trace[t] = ctx.alpha_t if mode == "muacp" else 0.0
        rain_trace[t] = ctx.rain_t

        applied = np.zeros((K, 2))
        for k in range(K):
            flagged = bool(step.flagged[k])
            if not flagged:
                # worst-case motion inflation: slip can scale the lateral
                # progress of either vehicle by up to (1 + r/2)
                slip_pad = 0.5 * ctx.rain_t * abs(float(truth[k][3])) * N_CHECK * cfg.dt * 0.5
                inflation = {j: slip_pad for j in step.neighbor_predictions[k]}
                ok = pre_collision_check(
                    k, step.plans[k].inputs, truth[k], step.neighbor_predictions[k], cfg, inflation
                )
                flagged = not ok
            if flagged:
                perceived = _perceived_states(ctx, k, K, mode)
                applied[k] = backup_policy(k, truth, cfg, u_prev[k], perceived)
                backup_steps[t, k] = True
                prev_plans[k] = None
            else:
                applied[k] = _rate_clip(step.plans[k].inputs[0], u_prev[k], cfg.vehicles[k].params)
                prev_plans[k] = step.plans[k]

        new_truth = np.zeros_like(truth)
        for k in range(K):
            veh = cfg.vehicles[k]
            if cfg.plant_model == "small_angle":
                nominal = step_small_angle(truth[k], applied[k], veh.params.lf, veh.params.lr, cfg.dt)
            else:
                nominal = step_exact(truth[k], applied[k], veh.params.lf, veh.params.lr, cfg.dt)
            eta = rain_slip(seed, k, t, ctx.rain_t)
            new_truth[k] = apply_slip(truth[k], nominal, eta)
            commanded[k] = nominal
        truth = new_truth
        inputs[t] = applied
        u_prev = applied
        states[t + 1] = truth

        if pairs:
            if uniform_dims:
                dists = batch_distance(truth[pair_a][:, :3], dims0, truth[pair_b][:, :3], dims0)
            else:
                dists = np.array(
                    [
                        polytope_distance_oracle(
                            vehicle_polytope(*truth[a][:3], cfg.vehicles[a].params.length, cfg.vehicles[a].params.width),
                            vehicle_polytope(*truth[b][:3], cfg.vehicles[b].params.length, cfg.vehicles[b].params.width),
                        )
                        for a, b in pairs
                    ]
                )
            min_pair_distance = min(min_pair_distance, float(dists.min()))
            for idx in np.where(dists <= 0.0)[0]:
                a, b = pairs[idx]
                if (a, b) not in collided_pairs:
                    collided_pairs.add((a, b))
                    pa = vehicle_polytope(*truth[a][:3], cfg.vehicles[a].params.length, cfg.vehicles[a].params.width)
                    pb = vehicle_polytope(*truth[b][:3], cfg.vehicles[b].params.length, cfg.vehicles[b].params.width)
                    collisions.append(
                        CollisionEvent(pair=(a, b), step=t + 1, penetration=penetration_depth(pa, pb))
                    )

    navigation_time = _navigation_time(cfg, states)
    success = not collisions and navigation_time is not None
    return EpisodeResult(
        success=success,
        collisions=collisions,
        navigation_time=navigation_time,
        mean_velocity=states[:, :, 3].mean(axis=0),
        mean_heading=states[:, :, 2].mean(axis=0),
        states=states,
        inputs=inputs,
        backup_count=int(backup_steps.sum()),
        backup_steps=backup_steps,
        statuses=statuses,
        margins_trace=margins_trace,
        connectivity_trace=connectivity,
        alpha_trace=alpha_trace,
        rain_trace=rain_trace,
        min_pair_distance=float(min_pair_distance) if K > 1 else np.inf,
        seed=seed,
        mode=mode,
    )


def _navigation_time(cfg: ScenarioConfig, states: np.ndarray) -> float | None:
    """First time (s) every lane-changing vehicle is settled on its
    target lane center within LATERAL_SETTLE and stays there."""
    movers = [
        k
        for k, v in enumerate(cfg.vehicles)
        if cfg.road.nearest_lane(v.initial[1]) != v.target_lane
    ]
    if not movers:
        return 0.0
    ok = np.ones(states.shape[0], dtype=bool)
    for k in movers:
        err = np.abs(states[:, k, 1] - cfg.road.lane_center(cfg.vehicles[k].target_lane))
        ok &= err < LATERAL_SETTLE
    settled = np.where(~ok)[0]
    first = (settled[-1] + 1) if settled.size else 0
    if first >= states.shape[0]:
        return None
    return float(first * cfg.dt)


# ---------------------------------------------------------------------------
# metrics and logs


def compute_metrics(results: list[EpisodeResult]) -> dict:
    """Aggregate a batch of episodes into one metric row."""
    if not results:
        raise ValueError("need at least one episode")
    n = len(results)
    successes = [r for r in results if r.success]
    nav = [r.navigation_time for r in successes if r.navigation_time is not None]
    return {
        "episodes": n,
        "success_rate": len(successes) / n,
        "navigation_time_s": float(np.mean(nav)) if nav else None,
        "mean_velocity": float(np.mean([r.mean_velocity.mean() for r in results])),
        "mean_heading": float(np.mean([r.mean_heading.mean() for r in results])),
        "collisions": int(sum(len(r.collisions) for r in results)),
        "backup_steps": int(sum(r.backup_count for r in results)),
    }


def _round(x, nd=9):
    if isinstance(x, float):
        return round(x, nd)
    return x


def episode_to_jsonl(result: EpisodeResult, cfg: ScenarioConfig) -> str:
    """Serialize one episode as JSON lines (meta, steps, result)."""
    lines = [
        json.dumps(
            {"type": "meta", "seed": result.seed, "mode": result.mode,
             "vehicles": cfg.n_vehicles, "steps": cfg.steps, "dt": cfg.dt},
            sort_keys=True,
        )
    ]
    T = cfg.steps
    for t in range(T):
        rec = {
            "type": "step",
            "t": t,
            "states": [[_round(float(x)) for x in row] for row in result.states[t + 1]],
            "inputs": [[_round(float(x)) for x in row] for row in result.inputs[t]],
            "margins": {k: _round(float(v)) for k, v in result.margins_trace[t].items()},
            "connectivity": result.connectivity_trace[t].astype(int).tolist(),
            "status": result.statuses[t],
            "backup": result.backup_steps[t].astype(bool).tolist(),
            "alpha": _round(float(result.alpha_trace[t])),
            "rain": _round(float(result.rain_trace[t])),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    lines.append(
        json.dumps(
            {
                "type": "result",
                "success": result.success,
                "navigation_time_s": result.navigation_time,
                "collisions": [
                    {"pair": list(c.pair), "step": c.step, "penetration": _round(float(c.penetration))}
                    for c in result.collisions
                ],
                "mean_velocity": [_round(float(v)) for v in result.mean_velocity],
                "mean_heading": [_round(float(v)) for v in result.mean_heading],
                "min_pair_distance": _round(float(result.min_pair_distance))
                if np.isfinite(result.min_pair_distance)
                else None,
                "backup_steps": result.backup_count,
            },
            sort_keys=True,
        )
    )
    return "\n".join(lines) + "\n"

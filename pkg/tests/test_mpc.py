import numpy as np
import pytest

from muacp.geometry import dual_distance_bound, vehicle_polytope
from muacp.mpc import (
    MODEL_MARGIN_PAD,
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    build_subproblem,
    evaluate_objective,
    solve_rcmpc,
)
from muacp.scenario import VehicleParams, Weights

PARAMS = VehicleParams()
WEIGHTS = Weights()
DT = 0.05
H = 25


def _straight_ref(v=15.0, y=0.0, n=H):
    ref = np.zeros((n + 1, 4))
    ref[:, 0] = v * DT * np.arange(n + 1)
    ref[:, 1] = y
    ref[:, 3] = v
    return ref


def _cold_lin(z0, n=H):
    from muacp.dynamics import rollout

    u = np.zeros((n, 2))
    return rollout(z0, u, PARAMS.lf, PARAMS.lr, DT), u


def test_reference_at_rest_zero_cost():
    z0 = np.array([0.0, 0.0, 0.0, 15.0])
    ref = _straight_ref()
    plan = solve_rcmpc(PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {}, {}, {})
    assert plan.status == STATUS_OPTIMAL
    assert np.abs(plan.inputs).max() <= 1e-7
    assert plan.objective <= 1e-10
    assert plan.outer_iterations <= 2


def test_cost_matrix_diagonal_pattern():
    z0 = np.array([0.0, 0.0, 0.0, 15.0])
    ref = _straight_ref()
    lin_states, lin_inputs = _cold_lin(z0)
    prob, cond = build_subproblem(
        PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, lin_states, lin_inputs, {}, {}, {}, {}
    )
    # inputs enter through identity and difference blocks: diagonal of P
    # carries 2*(Q_u + rate terms) plus tracking curvature through F
    F = cond.F[1:].reshape(4 * H, 2 * H)
    Qz = np.tile(np.asarray(WEIGHTS.state), H)
    D = np.eye(2 * H)
    for s in range(1, H):
        D[2 * s : 2 * s + 2, 2 * (s - 1) : 2 * s] -= np.eye(2)
    Qu = np.tile(np.asarray(WEIGHTS.input), H)
    Qdu = np.tile(np.asarray(WEIGHTS.input_rate), H)
    expected = 2.0 * ((F.T * Qz) @ F + np.diag(Qu) + (D.T * Qdu) @ D)
    assert np.abs(prob.P - expected).max() <= 1e-9


def test_alpha_zero_cost_identical_to_baseline_cost():
    # with the regularizer off, the assembled cost must match the
    # uncertainty-blind baseline term for term
    z0 = np.array([0.0, 0.5, 0.01, 14.0])
    ref = _straight_ref()
    lin_states, lin_inputs = _cold_lin(z0)
    nb = np.tile(np.array([40.0, 0.0, 0.0, 15.0]), (H + 1, 1))
    nb[:, 0] += 15.0 * DT * np.arange(H + 1)
    from muacp.geometry import batch_certificates

    _, certs = batch_certificates(
        lin_states[1:, :3], (PARAMS.length, PARAMS.width), nb[1:, :3], (PARAMS.length, PARAMS.width)
    )
    kwargs = dict(
        params=PARAMS, weights=WEIGHTS, dt=DT, z0=z0, u_prev=np.zeros(2),
        reference=ref, lin_states=lin_states, lin_inputs=lin_inputs,
        neighbors={1: nb}, neighbor_params={1: PARAMS}, certs={1: certs},
    )
    aware, _ = build_subproblem(margins={1: 1.6}, alpha_t=0.0, reg_target=np.ones(4), **kwargs)
    blind, _ = build_subproblem(margins={1: 1.0}, alpha_t=0.0, reg_target=None, **kwargs)
    assert np.abs(aware.P - blind.P).max() <= 1e-12
    assert np.abs(aware.q - blind.q).max() <= 1e-12


def test_objective_matches_direct_evaluation():
    z0 = np.array([0.0, 1.0, 0.02, 13.0])
    ref = _straight_ref()
    plan = solve_rcmpc(PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {}, {}, {})
    direct = evaluate_objective(plan.states, plan.inputs, np.zeros(2), ref, WEIGHTS)
    assert plan.objective == pytest.approx(direct, abs=1e-8)


def test_tracking_error_decays_along_horizon():
    z0 = np.array([0.0, 0.8, 0.0, 15.0])
    ref = _straight_ref()
    plan = solve_rcmpc(PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {}, {}, {})
    assert plan.status == STATUS_OPTIMAL
    lat = np.abs(plan.states[:, 1])
    assert lat[-1] < 0.25 * lat[0]


def test_static_neighbor_enforces_margin():
    z0 = np.array([0.0, 0.0, 0.0, 15.0])
    ref = _straight_ref()
    nb = np.tile(np.array([23.0, 0.4, 0.0, 0.0]), (H + 1, 1))
    plan = solve_rcmpc(
        PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {1: nb}, {1: PARAMS}, {1: 1.0}
    )
    assert plan.status == STATUS_OPTIMAL
    assert plan.min_clearance >= -1e-3  # oracle distance >= margin - 1e-3
    assert plan.states[-1, 3] < 14.5  # slowed down to keep the gap
    assert plan.states[-1, 0] < 18.0  # shorter travel than free flow


def test_solution_respects_bounds():
    z0 = np.array([0.0, 0.4, 0.01, 14.5])
    ref = _straight_ref()
    plan = solve_rcmpc(PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {}, {}, {})
    assert plan.status == STATUS_OPTIMAL
    assert np.all(plan.inputs >= np.asarray(PARAMS.u_min) - 1e-6)
    assert np.all(plan.inputs <= np.asarray(PARAMS.u_max) + 1e-6)
    assert np.all(plan.input_rates >= np.asarray(PARAMS.du_min) - 1e-6)
    assert np.all(plan.input_rates <= np.asarray(PARAMS.du_max) + 1e-6)
    assert np.all(plan.states >= np.asarray(PARAMS.z_min)[None, :] - 1e-6)
    assert np.all(plan.states <= np.asarray(PARAMS.z_max)[None, :] + 1e-6)


def test_certificates_feasible_and_bound_above_margin():
    z0 = np.array([0.0, 3.7, 0.0, 15.0])
    ref = _straight_ref(y=0.0)
    ref[:, 1] = 3.7 - 3.7 * np.linspace(0, 1, H + 1) ** 2  # descending reference
    nb = np.tile(np.array([12.0, 0.0, 0.0, 15.0]), (H + 1, 1))
    nb[:, 0] += 15.0 * DT * np.arange(H + 1)
    margin = 1.2
    plan = solve_rcmpc(
        PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {1: nb}, {1: PARAMS}, {1: margin}
    )
    assert plan.status == STATUS_OPTIMAL
    for s in range(1, H + 1):
        ego = vehicle_polytope(*plan.states[s][:3], PARAMS.length, PARAMS.width)
        other = vehicle_polytope(*nb[s][:3], PARAMS.length, PARAMS.width)
        cert = plan.certificates[1][s - 1]
        assert cert.is_feasible(ego, other, tol=1e-6)
        bound = dual_distance_bound(ego, other, cert, tol=1e-6)
        assert bound >= margin - 1e-6


def test_unreachable_margin_infeasible():
    # stopped wall right ahead: no way to honor the margin
    z0 = np.array([0.0, 0.0, 0.0, 15.0])
    ref = _straight_ref()
    nb = np.tile(np.array([10.0, 0.0, 0.0, 0.0]), (H + 1, 1))
    plan = solve_rcmpc(
        PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {1: nb}, {1: PARAMS}, {1: 3.0}
    )
    assert plan.status == STATUS_INFEASIBLE


def test_margin_profile_accepted():
    z0 = np.array([0.0, 0.0, 0.0, 15.0])
    ref = _straight_ref()
    nb = np.tile(np.array([40.0, 0.0, 0.0, 15.0]), (H + 1, 1))
    nb[:, 0] += 15.0 * DT * np.arange(H + 1)
    profile = np.linspace(0.5, 1.5, H)
    plan = solve_rcmpc(
        PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {1: nb}, {1: PARAMS}, {1: profile}
    )
    assert plan.status == STATUS_OPTIMAL


def test_warm_start_converges_fast():
    z0 = np.array([0.0, 0.2, 0.0, 15.0])
    ref = _straight_ref()
    cold = solve_rcmpc(PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {}, {}, {})
    warm = solve_rcmpc(PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {}, {}, {}, warm=cold)
    assert warm.status == STATUS_OPTIMAL
    assert warm.outer_iterations <= cold.outer_iterations + 1


def test_outer_residuals_mostly_contract():
    # soft convergence sanity across a small scenario batch
    rng = np.random.default_rng(5)
    drops = 0
    pairs = 0
    for trial in range(10):
        z0 = np.array([0.0, rng.uniform(-0.5, 0.5), rng.uniform(-0.05, 0.05), 15.0])
        ref = _straight_ref()
        nb = np.tile(np.array([18.0 + trial, 1.8, 0.0, 14.0]), (H + 1, 1))
        nb[:, 0] += 14.0 * DT * np.arange(H + 1)
        plan = solve_rcmpc(
            PARAMS, WEIGHTS, DT, z0, np.zeros(2), ref, {1: nb}, {1: PARAMS}, {1: 1.0}
        )
        r = plan.outer_residuals
        for a, b in zip(r, r[1:]):
            pairs += 1
            if b <= a + 1e-12:
                drops += 1
    assert pairs == 0 or drops / pairs >= 0.8

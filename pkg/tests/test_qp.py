import numpy as np
import pytest

from muacp.qp import INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, QpSettings, solve_qp

from _oracles import active_set_qp_oracle, random_strictly_convex_qp


def test_scalar_one_sided():
    # min x^2 s.t. x >= 1
    p = QpProblem(P=np.array([[2.0]]), q=np.zeros(1), A=np.array([[1.0]]),
                  l=np.array([1.0]), u=np.array([np.inf]))
    sol = solve_qp(p)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.y[0] == pytest.approx(-2.0, abs=1e-5)


def test_unconstrained_problem():
    rng = np.random.default_rng(0)
    L = rng.normal(size=(6, 6))
    P = L @ L.T + np.eye(6)
    q = rng.normal(size=6)
    p = QpProblem(P=P, q=q, A=np.zeros((0, 6)), l=np.zeros(0), u=np.zeros(0))
    sol = solve_qp(p)
    assert sol.status == OPTIMAL
    assert np.abs(P @ sol.x + q).max() <= 1e-8


def test_contradictory_bounds_infeasible():
    p = QpProblem(P=np.eye(2), q=np.zeros(2), A=np.eye(2),
                  l=np.array([1.0, 0.0]), u=np.array([0.0, 1.0]))
    assert solve_qp(p).status == INFEASIBLE


def test_geometric_infeasibility_detected():
    # x <= 0 and x >= 1 through two rows
    p = QpProblem(P=np.array([[2.0]]), q=np.zeros(1),
                  A=np.array([[1.0], [1.0]]),
                  l=np.array([-np.inf, 1.0]), u=np.array([0.0, np.inf]))
    sol = solve_qp(p)
    assert sol.status == INFEASIBLE


def test_equality_rows():
    # min ||x||^2 s.t. x0 + x1 = 1 -> x = (0.5, 0.5)
    p = QpProblem(P=2 * np.eye(2), q=np.zeros(2), A=np.array([[1.0, 1.0]]),
                  l=np.array([1.0]), u=np.array([1.0]))
    sol = solve_qp(p)
    assert sol.status == OPTIMAL
    assert sol.x == pytest.approx([0.5, 0.5], abs=1e-7)


def test_asymmetric_p_rejected():
    with pytest.raises(ValueError):
        QpProblem(P=np.array([[1.0, 0.5], [0.0, 1.0]]), q=np.zeros(2),
                  A=np.zeros((0, 2)), l=np.zeros(0), u=np.zeros(0))


def test_matches_active_set_oracle_200():
    rng = np.random.default_rng(12345)
    for _ in range(200):
        P, q, A, l, u = random_strictly_convex_qp(rng)
        prob = QpProblem(P=P, q=q, A=A, l=l, u=u)
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        x_ref = active_set_qp_oracle(P, q, A, l, u)
        assert np.abs(sol.x - x_ref).max() <= 1e-6


def test_warm_start_deterministic_and_consistent():
    rng = np.random.default_rng(77)
    P, q, A, l, u = random_strictly_convex_qp(rng)
    prob = QpProblem(P=P, q=q, A=A, l=l, u=u)
    cold = solve_qp(prob)
    warm = solve_qp(prob, warm_start=(cold.x, cold.y))
    assert warm.status == OPTIMAL
    assert np.abs(warm.x - cold.x).max() <= 1e-6
    again = solve_qp(prob)
    assert np.array_equal(again.x, cold.x)  # bitwise determinism


def test_residuals_reported_at_optimum():
    rng = np.random.default_rng(5)
    P, q, A, l, u = random_strictly_convex_qp(rng)
    sol = solve_qp(QpProblem(P=P, q=q, A=A, l=l, u=u))
    assert sol.status == OPTIMAL
    assert sol.residuals["stationarity"] <= 1e-5
    assert sol.residuals["primal"] <= 1e-6
    assert sol.residuals["complementarity"] <= 1e-5


def test_max_iter_status():
    rng = np.random.default_rng(3)
    P, q, A, l, u = random_strictly_convex_qp(rng)
    sol = solve_qp(QpProblem(P=P, q=q, A=A, l=l, u=u), settings=QpSettings(max_iter=1))
    assert sol.status in (MAX_ITER, OPTIMAL)

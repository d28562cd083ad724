"""Discrete kinematic bicycle models and their linearization.

Two discrete models are provided: an exact Euler-discretized bicycle
(`step_exact`, used as the simulation plant) and its small-angle
reduction (`step_small_angle`, used as the planner's internal model).
`linearize` produces the time-varying affine model the QP stage needs.

State layout is ``z = [x, y, phi, v]`` (m, m, rad, m/s); input layout is
``u = [a, delta]`` (m/s^2, rad).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def side_slip(delta: float, l_f: float, l_r: float) -> float:
    """Side slip angle beta = arctan((l_r / (l_f + l_r)) * tan(delta))."""
    if l_f + l_r <= 0.0:
        raise ValueError("axle spans must satisfy l_f + l_r > 0")
    return float(np.arctan(l_r / (l_f + l_r) * np.tan(delta)))


def side_slip_small(delta: float, l_f: float, l_r: float) -> float:
    """Small-angle side slip beta ~= l_r * delta / (l_f + l_r)."""
    if l_f + l_r <= 0.0:
        raise ValueError("axle spans must satisfy l_f + l_r > 0")
    return l_r * delta / (l_f + l_r)


def step_exact(z: np.ndarray, u: np.ndarray, l_f: float, l_r: float, dt: float) -> np.ndarray:
    """One exact Euler step of the kinematic bicycle.

    x' = x + v cos(phi + beta) dt
    y' = y + v sin(phi + beta) dt
    phi' = phi + v cos(beta) tan(delta) / (l_f + l_r) dt
    v' = v + a dt
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x, y, phi, v = float(z[0]), float(z[1]), float(z[2]), float(z[3])
    a, delta = float(u[0]), float(u[1])
    beta = side_slip(delta, l_f, l_r)
    return np.array(
        [
            x + v * np.cos(phi + beta) * dt,
            y + v * np.sin(phi + beta) * dt,
            phi + v * np.cos(beta) * np.tan(delta) / (l_f + l_r) * dt,
            v + a * dt,
        ]
    )


def step_small_angle(z: np.ndarray, u: np.ndarray, l_f: float, l_r: float, dt: float) -> np.ndarray:
    """One step of the small-angle bicycle model.

    x' = x + v dt
    y' = y + v (phi + beta) dt        with beta = l_r delta / (l_f + l_r)
    phi' = phi + v delta / (l_f + l_r) dt
    v' = v + a dt

    The heading update keeps the first-order term v*delta/(l_f+l_r); the
    second-order beta*delta product vanishes faster than every retained
    term and would otherwise kill the heading dynamics.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x, y, phi, v = float(z[0]), float(z[1]), float(z[2]), float(z[3])
    a, delta = float(u[0]), float(u[1])
    beta = side_slip_small(delta, l_f, l_r)
    return np.array(
        [
            x + v * dt,
            y + v * (phi + beta) * dt,
            phi + v * delta / (l_f + l_r) * dt,
            v + a * dt,
        ]
    )


@dataclass(frozen=True)
class LinearizedDynamics:
    """Time-varying affine model z_{s+1} ~= A_s z_s + B_s u_s + c_s.

    Shapes: A (S,4,4), B (S,4,2), c (S,4).  At the linearization point the
    affine model reproduces the small-angle step exactly (the model is
    bilinear, so c absorbs the curvature terms there).
    """

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        s = self.A.shape[0]
        if self.A.shape[1:] != (4, 4):
            raise ValueError("A blocks must be 4x4")
        if self.B.shape != (s, 4, 2):
            raise ValueError("B blocks must be 4x2")
        if self.c.shape != (s, 4):
            raise ValueError("c blocks must be 4-vectors")

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    def predict(self, s: int, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A[s] @ z + self.B[s] @ u + self.c[s]


def linearize(
    states: np.ndarray, inputs: np.ndarray, l_f: float, l_r: float, dt: float
) -> LinearizedDynamics:
    """First-order expansion of `step_small_angle` along a trajectory.

    `states` is (S+1,4) or (S,4) with S >= 1 matching `inputs` (S,2); the
    expansion at stage s uses (states[s], inputs[s]).
    """
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    S = inputs.shape[0]
    if states.shape[0] < S or S < 1:
        raise ValueError("need at least one (state, input) pair")
    L = l_f + l_r
    r = l_r / L
    A = np.zeros((S, 4, 4))
    B = np.zeros((S, 4, 2))
    c = np.zeros((S, 4))
    for s in range(S):
        _, _, phi, v = states[s]
        _, delta = inputs[s]
        A[s] = np.eye(4)
        A[s, 0, 3] = dt
        A[s, 1, 2] = v * dt
        A[s, 1, 3] = (phi + r * delta) * dt
        A[s, 2, 3] = delta / L * dt
        B[s, 1, 1] = v * r * dt
        B[s, 2, 1] = v / L * dt
        B[s, 3, 0] = dt
        f = step_small_angle(states[s], inputs[s], l_f, l_r, dt)
        c[s] = f - A[s] @ states[s] - B[s] @ inputs[s]
    return LinearizedDynamics(A=A, B=B, c=c)


def rollout(
    z0: np.ndarray,
    inputs: np.ndarray,
    l_f: float,
    l_r: float,
    dt: float,
    model: str = "small_angle",
) -> np.ndarray:
    """Propagate a state through an input sequence; returns (S+1,4) states."""
    step = step_small_angle if model == "small_angle" else step_exact
    inputs = np.asarray(inputs, dtype=float)
    out = np.zeros((inputs.shape[0] + 1, 4))
    out[0] = z0
    for s in range(inputs.shape[0]):
        out[s + 1] = step(out[s], inputs[s], l_f, l_r, dt)
    return out

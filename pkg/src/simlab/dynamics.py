"""Discrete-time quadrotor dynamics: the learned one-step model and the
analytic rigid-body model.

State layout (13): position, velocity (both inertial frame), unit quaternion
body->inertial (scalar first), body rates. Tangent layout (12): the same with
the quaternion block replaced by a 3-dim rotation vector.

The learned model consumes [v, w, q, u] (14 inputs, position excluded since
the dynamics are position-independent), regresses [v', w', q_raw'] (10
outputs), renormalizes the raw quaternion and advances position by one
explicit Euler step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .errors import ConfigError, DynamicsError
from .manifold import (
    boxminus,
    boxplus,
    cross3,
    quat_canonical,
    quat_left_matrix,
    quat_normalize,
)

Array = np.ndarray

# state vector slices
P, V, Q, W = slice(0, 3), slice(3, 6), slice(6, 10), slice(10, 13)
# tangent vector slices
TP, TV, TTH, TOM = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)

STATE_DIM = 13
TANGENT_DIM = 12
CONTROL_DIM = 4

GRAVITY = 9.81


@dataclass(frozen=True)
class State:
    """13-dim robot state. The quaternion is checked to be unit at construction."""

    p: Array
    v: Array
    q: Array
    w: Array

    def __post_init__(self):
        vec = np.concatenate([self.p, self.v, self.q, self.w])
        if vec.shape != (STATE_DIM,):
            raise ValueError("bad state component shapes")
        if not np.all(np.isfinite(vec)):
            raise ValueError("non-finite state component")
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-9:
            raise ValueError("quaternion is not unit norm")

    @staticmethod
    def from_vec(x: Array) -> "State":
        x = np.asarray(x, dtype=np.float64)
        return State(x[P].copy(), x[V].copy(), x[Q].copy(), x[W].copy())

    def as_vec(self) -> Array:
        return np.concatenate([self.p, self.v, self.q, self.w])

    @staticmethod
    def hover(p: Array | None = None) -> "State":
        p = np.zeros(3) if p is None else np.asarray(p, dtype=np.float64)
        return State(p, np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))


@dataclass(frozen=True)
class Control:
    """Per-rotor thrust command in newtons."""

    f: Array

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        if f.shape != (CONTROL_DIM,):
            raise ValueError("control must have 4 components")
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite control")
        object.__setattr__(self, "f", f)


def state_boxplus(x: Array, xi: Array) -> Array:
    """Perturb a state vector by a 12-dim tangent vector; broadcasts."""
    x = np.asarray(x, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]) + (STATE_DIM,))
    out[..., P] = x[..., P] + xi[..., TP]
    out[..., V] = x[..., V] + xi[..., TV]
    out[..., Q] = boxplus(x[..., Q], xi[..., TTH])
    out[..., W] = x[..., W] + xi[..., TOM]
    return out


def state_boxminus(x1: Array, x2: Array) -> Array:
    """Tangent difference of two state vectors (x1 relative to x2); broadcasts."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    out = np.empty(np.broadcast_shapes(x1.shape[:-1], x2.shape[:-1]) + (TANGENT_DIM,))
    out[..., TP] = x1[..., P] - x2[..., P]
    out[..., TV] = x1[..., V] - x2[..., V]
    out[..., TTH] = boxminus(x1[..., Q], x2[..., Q])
    out[..., TOM] = x1[..., W] - x2[..., W]
    return out


# ---------------------------------------------------------------------------
# learned model
# ---------------------------------------------------------------------------

def model_input(x: Array, u: Array) -> Array:
    """14-dim network input [v, w, q, u]; broadcasts over leading dims."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    xb = np.broadcast_to(x, shape + (STATE_DIM,))
    ub = np.broadcast_to(u, shape + (CONTROL_DIM,))
    return np.concatenate([xb[..., V], xb[..., W], xb[..., Q], ub], axis=-1)


def model_target(x_next: Array) -> Array:
    """10-dim regression target [v', w', q'] taken from the next state."""
    x_next = np.asarray(x_next, dtype=np.float64)
    return np.concatenate([x_next[..., V], x_next[..., W], x_next[..., Q]], axis=-1)


def predict_vec(params: mlp.MlpParams, x: Array, u: Array, dt: float, residual: bool = False) -> Array:
    """One-step prediction on raw 13/4 vectors; broadcasts over leading dims.

    See predict() for semantics.
    """
    x = np.asarray(x, dtype=np.float64)
    inp = model_input(x, u)
    y, _ = mlp.forward(params, inp)
    if residual:
        y = y + inp[..., :10]
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0]) % y.shape[-1]
        raise DynamicsError(f"non-finite model output at component {bad}")
    q_raw = y[..., 6:10]
    if np.any(np.linalg.norm(q_raw, axis=-1) <= 1e-6):
        raise DynamicsError("degenerate predicted quaternion (norm <= 1e-6)")
    out = np.empty(y.shape[:-1] + (STATE_DIM,))
    out[..., P] = x[..., P] + x[..., V] * dt
    out[..., V] = y[..., 0:3]
    out[..., Q] = quat_canonical(quat_normalize(q_raw))
    out[..., W] = y[..., 3:6]
    return out


def predict(params: mlp.MlpParams, x: State, u: Control, dt: float, residual: bool = False) -> State:
    """Learned discrete-time step: regress [v', w', q'], renormalize the
    quaternion, advance position by explicit Euler."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return State.from_vec(predict_vec(params, x.as_vec(), u.f, dt, residual=residual))


def predict_jacobian(
    params: mlp.MlpParams, x: Array, u: Array, dt: float, residual: bool = False
) -> tuple[Array, Array]:
    """Tangent-space Jacobians (12x12, 12x4) of predict_vec at (x, u).

    Chain rule through the network, the quaternion renormalization and the
    Euler position update; the input perturbation enters via boxplus, the
    output difference via boxminus.
    """
    inp = model_input(x, u)
    y, cache = mlp.forward(params, inp)
    if residual:
        y = y + inp[:10]
    Jin = mlp.input_jacobian(params, cache)  # (10, 14)
    if residual:
        Jin = Jin + np.hstack([np.eye(10), np.zeros((10, 4))])
    if not np.all(np.isfinite(Jin)):
        raise DynamicsError("non-finite model Jacobian")
    q_raw = y[6:10]
    nq = np.linalg.norm(q_raw)
    if nq <= 1e-6:
        raise DynamicsError("degenerate predicted quaternion (norm <= 1e-6)")
    q_next = quat_canonical(q_raw / nq)

    # d(input)/d(tangent state): v and w map straight through, the quaternion
    # block picks up d(q boxplus delta)/d(delta) = 0.5 L(q)[:, 1:]
    Ein = np.zeros((14, TANGENT_DIM))
    Ein[0:3, TV] = np.eye(3)
    Ein[3:6, TOM] = np.eye(3)
    Ein[6:10, TTH] = 0.5 * quat_left_matrix(x[Q])[:, 1:]

    # d(tangent of renormalized quaternion)/d(raw quaternion): the ratio form
    # of 2 log(q_next^* ⊗ q_raw/|q_raw|) is invariant to the canonical sign
    s_w = float(q_next @ q_raw)  # scalar part of q_next^* ⊗ q_raw, = ±|q_raw|
    D = (2.0 / s_w) * quat_left_matrix(np.concatenate([q_next[:1], -q_next[1:]]))[1:, :]

    Jx = np.zeros((TANGENT_DIM, TANGENT_DIM))
    Ju = np.zeros((TANGENT_DIM, CONTROL_DIM))
    Jx[TP, TP] = np.eye(3)
    Jx[TP, TV] = dt * np.eye(3)
    Jx[TV] = Jin[0:3] @ Ein
    Ju[TV] = Jin[0:3, 10:14]
    Jx[TOM] = Jin[3:6] @ Ein
    Ju[TOM] = Jin[3:6, 10:14]
    JQ = D @ Jin[6:10]
    Jx[TTH] = JQ @ Ein
    Ju[TTH] = JQ[:, 10:14]
    return Jx, Ju


# ---------------------------------------------------------------------------
# analytic rigid-body model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidBodyParams:
    """Nominal rigid-body constants; values come from the scenario config."""

    mass: float = 0.25
    inertia: Array = field(default_factory=lambda: np.array([2.5e-4, 2.5e-4, 4.0e-4]))
    arm_length: float = 0.08
    torque_coeff: float = 0.01
    gravity: float = GRAVITY
    f_min: float = 0.0
    f_max: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=np.float64))
        if self.mass <= 0.0:
            raise ConfigError("mass must be positive")
        if self.inertia.shape != (3,) or np.any(self.inertia <= 0.0):
            raise ConfigError("inertia must be three positive principal moments")
        if self.arm_length <= 0.0 or self.torque_coeff <= 0.0:
            raise ConfigError("arm length and torque coefficient must be positive")
        object.__setattr__(self, "_alloc", self._build_allocation())

    @property
    def hover_thrust(self) -> float:
        """Total thrust that balances gravity."""
        return self.mass * self.gravity

    def hover_control(self) -> Array:
        return np.full(CONTROL_DIM, self.hover_thrust / 4.0)

    def _build_allocation(self) -> Array:
        a = self.arm_length / np.sqrt(2.0)
        rx = np.array([a, a, -a, -a])
        ry = np.array([-a, a, a, -a])
        spin = np.array([-1.0, 1.0, -1.0, 1.0])
        return np.vstack([ry, -rx, spin * self.torque_coeff])

    def allocation(self) -> Array:
        """3x4 map from per-rotor forces to body torque (X configuration)."""
        return self._alloc


def _rigid_body_deriv_single(model: RigidBodyParams, x: Array, u: Array) -> Array:
    """Scalar-unrolled derivative for 1-D inputs (the simulator hot path)."""
    qw, qx, qy, qz = x[6], x[7], x[8], x[9]
    wx, wy, wz = x[10], x[11], x[12]
    inv_m = (u[0] + u[1] + u[2] + u[3]) / model.mass
    tq = u @ model.allocation().T
    jx, jy, jz = model.inertia
    out = np.empty(STATE_DIM)
    out[0:3] = x[3:6]
    out[3] = 2.0 * (qx * qz + qw * qy) * inv_m
    out[4] = 2.0 * (qy * qz - qw * qx) * inv_m
    out[5] = (1.0 - 2.0 * (qx * qx + qy * qy)) * inv_m - model.gravity
    out[6] = 0.5 * (-qx * wx - qy * wy - qz * wz)
    out[7] = 0.5 * (qw * wx + qy * wz - qz * wy)
    out[8] = 0.5 * (qw * wy - qx * wz + qz * wx)
    out[9] = 0.5 * (qw * wz + qx * wy - qy * wx)
    out[10] = (tq[0] - (wy * jz * wz - wz * jy * wy)) / jx
    out[11] = (tq[1] - (wz * jx * wx - wx * jz * wz)) / jy
    out[12] = (tq[2] - (wx * jy * wy - wy * jx * wx)) / jz
    return out


def rigid_body_deriv(model: RigidBodyParams, x: Array, u: Array) -> Array:
    """Continuous-time rigid-body derivative; broadcasts over leading dims."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.ndim == 1 and u.ndim == 1:
        return _rigid_body_deriv_single(model, x, u)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    x = np.broadcast_to(x, shape + (STATE_DIM,))
    u = np.broadcast_to(u, shape + (CONTROL_DIM,))
    q = x[..., Q]
    w = x[..., W]
    thrust = u.sum(axis=-1)
    # thrust along body z: R(q) @ [0, 0, T] expanded by hand
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    inv_m = thrust / model.mass
    acc = np.stack(
        [
            2.0 * (qx * qz + qw * qy) * inv_m,
            2.0 * (qy * qz - qw * qx) * inv_m,
            (1.0 - 2.0 * (qx * qx + qy * qy)) * inv_m - model.gravity,
        ],
        axis=-1,
    )
    torque = u @ model.allocation().T
    J = model.inertia
    wdot = (torque - cross3(w, J * w)) / J
    # qdot = 0.5 * q ⊗ [0, w]
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    qdot = 0.5 * np.stack(
        [
            -qx * wx - qy * wy - qz * wz,
            qw * wx + qy * wz - qz * wy,
            qw * wy - qx * wz + qz * wx,
            qw * wz + qx * wy - qy * wx,
        ],
        axis=-1,
    )
    out = np.empty_like(x)
    out[..., P] = x[..., V]
    out[..., V] = acc
    out[..., Q] = qdot
    out[..., W] = wdot
    return out


def rk4_step(deriv, x: Array, u: Array, dt: float) -> Array:
    """Classic RK4 for a state-vector ODE, quaternion renormalized afterwards."""
    k1 = deriv(x, u)
    k2 = deriv(x + 0.5 * dt * k1, u)
    k3 = deriv(x + 0.5 * dt * k2, u)
    k4 = deriv(x + dt * k3, u)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[..., Q] = quat_normalize(out[..., Q])
    return out


def analytic_step_vec(model: RigidBodyParams, x: Array, u: Array, dt: float) -> Array:
    return rk4_step(lambda xs, us: rigid_body_deriv(model, xs, us), x, u, dt)


def analytic_step(model: RigidBodyParams, x: State, u: Control, dt: float) -> State:
    """Nominal quadrotor step: rigid-body ODE integrated with one RK4 stage."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return State.from_vec(analytic_step_vec(model, x.as_vec(), u.f, dt))


def analytic_jacobian_all(
    model: RigidBodyParams, xs: Array, us: Array, dt: float, h: float = 1e-6
) -> tuple[Array, Array]:
    """Tangent-space Jacobians of analytic_step_vec along a whole trajectory
    by batched central differences: xs (N, 13), us (N, 4) -> (N, 12, 12),
    (N, 12, 4).

    The nominal model is only a baseline, so finite differences of the smooth
    RK4 map are accurate enough for the SQP; the learned model uses exact
    Jacobians instead.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    us = np.atleast_2d(np.asarray(us, dtype=np.float64))
    n, m = TANGENT_DIM, CONTROL_DIM
    N = xs.shape[0]
    xi = np.vstack([h * np.eye(n), -h * np.eye(n)])  # (2n, n)
    x_pert = state_boxplus(xs[:, None, :], xi[None, :, :])  # (N, 2n, 13)
    y = analytic_step_vec(model, x_pert.reshape(-1, STATE_DIM), np.repeat(us, 2 * n, axis=0), dt)
    y = y.reshape(N, 2 * n, STATE_DIM)
    Jx = state_boxminus(y[:, :n], y[:, n:]).transpose(0, 2, 1) / (2.0 * h)

    du = np.vstack([h * np.eye(m), -h * np.eye(m)])
    u_pert = us[:, None, :] + du[None, :, :]
    y = analytic_step_vec(
        model,
        np.repeat(xs, 2 * m, axis=0),
        u_pert.reshape(-1, CONTROL_DIM),
        dt,
    ).reshape(N, 2 * m, STATE_DIM)
    Ju = state_boxminus(y[:, :m], y[:, m:]).transpose(0, 2, 1) / (2.0 * h)
    return Jx, Ju


def analytic_jacobian(model: RigidBodyParams, x: Array, u: Array, dt: float, h: float = 1e-6) -> tuple[Array, Array]:
    """Single-point wrapper around analytic_jacobian_all."""
    Jx, Ju = analytic_jacobian_all(model, x, u, dt, h)
    return Jx[0], Ju[0]

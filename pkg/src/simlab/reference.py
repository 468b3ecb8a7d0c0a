"""Reference trajectories and the minimal flat-output-to-state map.

Six closed-form periodic families (named after the test figures they mimic)
with analytic velocity and acceleration. Desired attitude comes from the
required thrust direction at zero yaw, desired body rates from differencing
that attitude, and desired rotor forces split the flat thrust evenly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import STATE_DIM, RigidBodyParams
from .errors import ConfigError
from .manifold import boxminus, quat_canonical, rotmat_to_quat

Array = np.ndarray

TRAJECTORY_IDS = (
    "hover",
    "ellipse",
    "warped_ellipse",
    "lemniscate",
    "extended_lemniscate",
    "parabola",
    "transposed_parabola",
)


@dataclass(frozen=True)
class TrajectoryParams:
    """Geometry of a reference curve. Scales in meters, period in seconds."""

    traj_id: str = "ellipse"
    center: Array = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    scale_x: float = 1.0
    scale_y: float = 1.0
    scale_z: float = 0.3
    period: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.traj_id not in TRAJECTORY_IDS:
            raise ConfigError(f"unknown trajectory id '{self.traj_id}'")
        if self.period <= 0.0:
            raise ConfigError("trajectory period must be positive")


def flat_outputs(params: TrajectoryParams, t: float) -> tuple[Array, Array, Array, float]:
    """Position, velocity, acceleration and yaw of the reference at time t."""
    if t < 0.0:
        raise ValueError("time must be non-negative")
    w = 2.0 * np.pi / params.period
    ax, ay, az = params.scale_x, params.scale_y, params.scale_z
    s, c = np.sin(w * t), np.cos(w * t)
    s2, c2 = np.sin(2.0 * w * t), np.cos(2.0 * w * t)
    tid = params.traj_id
    if tid == "hover":
        p = np.zeros(3)
        v = np.zeros(3)
        a = np.zeros(3)
    elif tid == "ellipse":
        p = np.array([ax * c, ay * s, 0.0])
        v = w * np.array([-ax * s, ay * c, 0.0])
        a = w * w * np.array([-ax * c, -ay * s, 0.0])
    elif tid == "warped_ellipse":
        p = np.array([ax * c, ay * s, az * s2])
        v = w * np.array([-ax * s, ay * c, 2.0 * az * c2])
        a = w * w * np.array([-ax * c, -ay * s, -4.0 * az * s2])
    elif tid == "lemniscate":
        p = np.array([ax * s, ay * s * c, 0.0])
        v = w * np.array([ax * c, ay * c2, 0.0])
        a = w * w * np.array([-ax * s, -2.0 * ay * s2, 0.0])
    elif tid == "extended_lemniscate":
        p = np.array([2.0 * ax * s, ay * s * c, az * s2])
        v = w * np.array([2.0 * ax * c, ay * c2, 2.0 * az * c2])
        a = w * w * np.array([-2.0 * ax * s, -2.0 * ay * s2, -4.0 * az * s2])
    elif tid == "parabola":
        p = np.array([ax * s, ay * s * s, 0.0])
        v = w * np.array([ax * c, ay * s2, 0.0])
        a = w * w * np.array([-ax * s, 2.0 * ay * c2, 0.0])
    elif tid == "transposed_parabola":
        p = np.array([ax * s, 0.0, az * s * s])
        v = w * np.array([ax * c, 0.0, az * s2])
        a = w * w * np.array([-ax * s, 0.0, 2.0 * az * c2])
    else:  # pragma: no cover - guarded by TrajectoryParams
        raise ConfigError(f"unknown trajectory id '{tid}'")
    return params.center + p, v, a, 0.0


def attitude_from_thrust(a: Array, yaw: float, gravity: float) -> Array:
    """Unit quaternion whose body z axis carries the required specific force."""
    t_vec = a + np.array([0.0, 0.0, gravity])
    zb = t_vec / np.linalg.norm(t_vec)
    xc = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    yb = np.cross(zb, xc)
    yb = yb / np.linalg.norm(yb)
    xb = np.cross(yb, zb)
    return quat_canonical(rotmat_to_quat(np.column_stack([xb, yb, zb])))


class ReferenceGenerator:
    """Samples desired states and controls for the controller horizon."""

    def __init__(self, params: TrajectoryParams, rbp: RigidBodyParams, dt: float):
        self.params = params
        self.rbp = rbp
        self.dt = dt
        self._grid_cache: dict[int, tuple[Array, Array]] = {}

    def state_at(self, t: float) -> Array:
        p, v, a, yaw = flat_outputs(self.params, t)
        q = attitude_from_thrust(a, yaw, self.rbp.gravity)
        q_next = attitude_from_thrust(
            flat_outputs(self.params, t + self.dt)[2], yaw, self.rbp.gravity
        )
        w = boxminus(q_next, q) / self.dt
        return np.concatenate([p, v, q, w])

    def control_at(self, t: float) -> Array:
        _, _, a, _ = flat_outputs(self.params, t)
        thrust = self.rbp.mass * np.linalg.norm(a + np.array([0.0, 0.0, self.rbp.gravity]))
        return np.full(4, thrust / 4.0)

    def _grid_point(self, k: int) -> tuple[Array, Array]:
        cached = self._grid_cache.get(k)
        if cached is None:
            t = k * self.dt
            cached = (self.state_at(t), self.control_at(t))
            self._grid_cache[k] = cached
        return cached

    def window(self, t0: float, n_steps: int) -> tuple[Array, Array]:
        """Desired states (n+1, 13) and controls (n, 4) on the horizon grid.

        Windows are cached on the dt grid; t0 snaps to the nearest grid index.
        """
        k0 = int(round(t0 / self.dt))
        points = [self._grid_point(k0 + k) for k in range(n_steps + 1)]
        xs = np.stack([pt[0] for pt in points])
        us = np.stack([pt[1] for pt in points[:-1]])
        return xs, us

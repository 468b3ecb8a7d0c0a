"""Ground-truth closed-loop physics with perturbation scenarios.

The truth model is the rigid-body quadrotor plus exactly one optional
perturbation:

  * payload  - point mass on a stiff elastic cable attached at the body
    center of mass; slack cable carries no force, taut cable transfers
    tension to the body (Newton third pair), so the payload swings freely.
  * mixed propellers - per-rotor efficiency factors applied to the commanded
    forces before they reach the rigid body.
  * wind - quadratic drag against the relative airspeed, with the air
    velocity following an Ornstein-Uhlenbeck gust process around the mean
    wind vector.

Controls are zero-order-held over the control period while the physics
substeps with RK4 at a finer rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import P, Q, V, W, RigidBodyParams, State, rigid_body_deriv, rk4_step
from .errors import ConfigError

Array = np.ndarray


@dataclass(frozen=True)
class PayloadPerturbation:
    mass: float = 0.075
    cable_length: float = 0.8
    stiffness: float = 500.0  # stiff-cable spring constant, N/m
    damping: float = 8.0  # radial damping when taut, N s/m

    def __post_init__(self):
        if self.mass <= 0.0 or self.cable_length <= 0.0:
            raise ConfigError("payload mass and cable length must be positive")


@dataclass(frozen=True)
class MixedPropellersPerturbation:
    factors: Array = field(default_factory=lambda: np.array([0.85, 1.1, 0.9, 1.05]))

    def __post_init__(self):
        object.__setattr__(self, "factors", np.asarray(self.factors, dtype=np.float64))
        if self.factors.shape != (4,) or np.any(self.factors <= 0.0):
            raise ConfigError("need four positive propeller efficiency factors")


@dataclass(frozen=True)
class WindPerturbation:
    mean_speed: float = 3.0
    direction: Array = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    gust_std: float = 0.5
    correlation_time: float = 1.0
    drag_coeff: float = 0.06  # N per (m/s)^2

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n < 1e-9:
            raise ConfigError("wind direction must be a nonzero vector")
        object.__setattr__(self, "direction", d / n)
        if self.correlation_time <= 0.0:
            raise ConfigError("gust correlation time must be positive")


Perturbation = PayloadPerturbation | MixedPropellersPerturbation | WindPerturbation | None


class TruthSimulator:
    """Owns the hidden truth state (payload, gusts) across an episode."""

    def __init__(
        self,
        rbp: RigidBodyParams,
        perturbation: Perturbation = None,
        substeps: int = 50,
        rng: np.random.Generator | None = None,
    ):
        if substeps < 1:
            raise ConfigError("substeps must be >= 1")
        self.rbp = rbp
        self.perturbation = perturbation
        self.substeps = substeps
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.payload_pos: Array | None = None
        self.payload_vel: Array | None = None
        self.wind_velocity: Array | None = None

    def reset(self, x0: State) -> None:
        if isinstance(self.perturbation, PayloadPerturbation):
            # hanging at rest straight below the attachment point
            self.payload_pos = x0.p + np.array([0.0, 0.0, -self.perturbation.cable_length])
            self.payload_vel = x0.v.copy()
        if isinstance(self.perturbation, WindPerturbation):
            w = self.perturbation
            self.wind_velocity = w.mean_speed * w.direction

    def _step_once(self, x: Array, u: Array, dt: float) -> Array:
        rbp = self.rbp
        pert = self.perturbation
        u_eff = u
        if isinstance(pert, MixedPropellersPerturbation):
            u_eff = u * pert.factors

        extra_force = np.zeros(3)  # inertial-frame force on the body
        if isinstance(pert, WindPerturbation):
            v_rel = self.wind_velocity - x[V]
            extra_force = pert.drag_coeff * np.linalg.norm(v_rel) * v_rel

        if isinstance(pert, PayloadPerturbation):
            # couple body and payload through the cable within one RK4 pass
            aug = np.concatenate([x, self.payload_pos, self.payload_vel])

            def deriv(z, uu):
                body = rigid_body_deriv(rbp, z[:13], uu)
                f_cable = self._tension_at(z[:13][P], z[:13][V], z[13:16], z[16:19])
                body[V] += (extra_force - f_cable) / rbp.mass
                dpl = np.concatenate(
                    [z[16:19], f_cable / pert.mass + np.array([0.0, 0.0, -rbp.gravity])]
                )
                return np.concatenate([body, dpl])

            k1 = deriv(aug, u_eff)
            k2 = deriv(aug + 0.5 * dt * k1, u_eff)
            k3 = deriv(aug + 0.5 * dt * k2, u_eff)
            k4 = deriv(aug + dt * k3, u_eff)
            aug = aug + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            aug[Q] = aug[Q] / np.linalg.norm(aug[Q])
            self.payload_pos = aug[13:16]
            self.payload_vel = aug[16:19]
            return aug[:13]

        def deriv(z, uu):
            out = rigid_body_deriv(rbp, z, uu)
            out[V] += extra_force / rbp.mass
            return out

        return rk4_step(deriv, x.copy(), u_eff, dt)

    def _tension_at(self, p_body: Array, v_body: Array, p_load: Array, v_load: Array) -> Array:
        """Force the cable applies to the payload; the body sees the reaction."""
        pl = self.perturbation
        d = p_load - p_body
        dist = np.linalg.norm(d)
        stretch = dist - pl.cable_length
        if stretch <= 0.0 or dist < 1e-12:
            return np.zeros(3)
        unit = d / dist
        radial_vel = float((v_load - v_body) @ unit)
        magnitude = max(0.0, pl.stiffness * stretch + pl.damping * radial_vel)
        return -magnitude * unit

    def step(self, x: State, u: Array, dt: float) -> State:
        """Advance the truth by one control period with zero-order-held u."""
        xv = x.as_vec()
        h = dt / self.substeps
        for _ in range(self.substeps):
            if isinstance(self.perturbation, WindPerturbation):
                self._update_gust(h)
            xv = self._step_once(xv, u, h)
        return State.from_vec(xv)

    def _update_gust(self, dt: float) -> None:
        w = self.perturbation
        mean = w.mean_speed * w.direction
        decay = np.exp(-dt / w.correlation_time)
        noise = w.gust_std * np.sqrt(1.0 - decay * decay)
        self.wind_velocity = mean + (self.wind_velocity - mean) * decay + noise * self.rng.standard_normal(3)

    def mechanical_energy(self, x: State) -> float:
        """Kinetic + potential (+ cable elastic) energy of body and payload."""
        rbp = self.rbp
        e = 0.5 * rbp.mass * float(x.v @ x.v)
        e += 0.5 * float(x.w @ (rbp.inertia * x.w))
        e += rbp.mass * rbp.gravity * float(x.p[2])
        if isinstance(self.perturbation, PayloadPerturbation):
            pl = self.perturbation
            e += 0.5 * pl.mass * float(self.payload_vel @ self.payload_vel)
            e += pl.mass * rbp.gravity * float(self.payload_pos[2])
            stretch = max(0.0, float(np.linalg.norm(self.payload_pos - x.p)) - pl.cable_length)
            e += 0.5 * pl.stiffness * stretch * stretch
        return e

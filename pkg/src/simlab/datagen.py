"""Simulator-generated training data.

Flights are produced by the nominal controller tracking randomized reference
curves on the unperturbed rigid body, with white excitation noise added to
the commanded rotor forces and measurement noise on the logged states. The
logged (state, applied control) pairs are exactly what the one-step learner
consumes. Fully seeded: the dataset is a pure function of the config.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dynamics import State
from .errors import SimlabError
from .learner import Trajectory, save_trajectory
from .mpc import ControllerContext
from .reference import ReferenceGenerator, TrajectoryParams
from .runner import in_crash_envelope, measure
from .sim import TruthSimulator

_FAMILIES = (
    "hover",
    "ellipse",
    "warped_ellipse",
    "lemniscate",
    "extended_lemniscate",
    "parabola",
    "transposed_parabola",
)


def _sample_trajectory(rng: np.random.Generator) -> TrajectoryParams:
    tid = _FAMILIES[int(rng.integers(len(_FAMILIES)))]
    return TrajectoryParams(
        traj_id=tid,
        center=np.array([0.0, 0.0, float(rng.uniform(0.8, 1.2))]),
        scale_x=float(rng.uniform(0.6, 1.3)),
        scale_y=float(rng.uniform(0.6, 1.3)),
        scale_z=float(rng.uniform(0.1, 0.4)),
        period=float(rng.uniform(5.0, 10.0)),
    )


def _fly_episode(cfg: ExperimentConfig, traj: TrajectoryParams, seed: int, seconds: float) -> Trajectory:
    rng_sim, rng_noise, rng_exc = [
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    ]
    rbp = cfg.rigid_body
    dt = cfg.controller.dt
    ref = ReferenceGenerator(traj, rbp, dt)
    x_true = State.from_vec(ref.state_at(0.0))
    sim = TruthSimulator(rbp, None, cfg.substeps, rng_sim)
    sim.reset(x_true)
    ctx = ControllerContext("nominal", cfg.controller, ref, rbp)
    n_steps = int(round(seconds / dt))
    ts, xs, us = [], [], []
    for k in range(n_steps):
        x_est = measure(x_true, cfg.noise, rng_noise)
        try:
            u, _ = ctx.control_step(x_est)
        except SimlabError:
            break
        u_cmd = np.clip(
            u.f + cfg.dataset.excitation_std * rng_exc.standard_normal(4),
            rbp.f_min,
            rbp.f_max,
        )
        ts.append(k * dt)
        xs.append(x_est.as_vec())
        us.append(u_cmd)
        x_true = sim.step(x_true, u_cmd, dt)
        if in_crash_envelope(x_true):
            break
    return Trajectory(np.array(ts), np.array(xs), np.array(us))


def generate_dataset(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> list[Trajectory]:
    """Fly enough seeded episodes to cover cfg.dataset.minutes of flight."""
    ds = cfg.dataset
    n_episodes = int(np.ceil(ds.minutes * 60.0 / ds.episode_seconds))
    root = np.random.SeedSequence(ds.seed)
    episode_seeds = root.generate_state(n_episodes)
    rng_traj = np.random.default_rng(root.spawn(1)[0])
    out = []
    for i in range(n_episodes):
        traj_params = _sample_trajectory(rng_traj)
        flight = _fly_episode(cfg, traj_params, int(episode_seeds[i]), ds.episode_seconds)
        if len(flight) >= 2:
            out.append(flight)
    if out_dir is not None:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        for i, traj in enumerate(out):
            save_trajectory(traj, path / f"traj_{i:04d}.csv")
    return out

"""Closed-loop episodes, tracking metrics and the experiment suite.

An episode runs estimate -> control -> actuate -> log at the control rate
until the scenario duration elapses or the crash envelope trips. Everything
is keyed by explicit seeds: the same (scenario, mode, seed, config) tuple
reproduces the same record byte for byte, which is why wall-clock solve times
are only written when explicitly requested.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mlp
from .config import ExperimentConfig, NoiseConfig, ScenarioConfig
from .dynamics import State
from .errors import SimlabError
from .manifold import boxplus, quat_normalize, rotate_vector
from .mpc import ControllerContext
from .reference import ReferenceGenerator
from .sim import TruthSimulator

Array = np.ndarray

# crash envelope
POSITION_LIMIT = 10.0  # m, any axis
TILT_LIMIT_DEG = 80.0

CSV_COLUMNS = (
    ["t", "mode", "solve_ms", "kkt", "forward_error"]
    + [f"sigma_{i}" for i in range(1, 13)]
    + [f"u_{i}" for i in range(1, 5)]
    + [f"x_{i}" for i in range(1, 14)]
    + [f"xdes_{i}" for i in range(1, 14)]
    + [f"xtrue_{i}" for i in range(1, 14)]
    + ["stage_cost"]
)


@dataclass
class RunRecord:
    scenario: str
    mode: str
    seed: int
    t: Array
    x_true: Array  # (n, 13)
    x_est: Array
    x_des: Array
    u: Array  # (n, 4)
    sigma: Array  # (n, 12)
    forward_error: Array
    kkt: Array
    solve_ms: Array
    stage_cost: Array
    crashed: bool
    summary: dict


def measure(x: State, noise: NoiseConfig, rng: np.random.Generator) -> State:
    """Corrupt the true state with the configured zero-mean Gaussian noise."""
    q = boxplus(x.q, noise.attitude * rng.standard_normal(3))
    return State(
        x.p + noise.position * rng.standard_normal(3),
        x.v + noise.velocity * rng.standard_normal(3),
        quat_normalize(q),
        x.w + noise.body_rate * rng.standard_normal(3),
    )


def in_crash_envelope(x: State) -> bool:
    if np.any(np.abs(x.p) > POSITION_LIMIT):
        return True
    body_z = rotate_vector(x.q, np.array([0.0, 0.0, 1.0]))
    return bool(body_z[2] < np.cos(np.deg2rad(TILT_LIMIT_DEG)))


def compute_metrics(x_true: Array, x_des: Array) -> dict:
    """Per-step RMSE over the 13 state components (quaternion sign aligned),
    the position-only variant, and their cumulative sums."""
    if x_true.shape[0] == 0:
        return {
            "steps": 0,
            "rmse_state_mean": float("nan"),
            "rmse_pos_mean": float("nan"),
            "crmse_state_final": 0.0,
            "crmse_pos_final": 0.0,
        }
    err = x_true - x_des
    flip = np.sign(np.sum(x_true[:, 6:10] * x_des[:, 6:10], axis=1, keepdims=True))
    flip[flip == 0.0] = 1.0
    err[:, 6:10] = flip * x_true[:, 6:10] - x_des[:, 6:10]
    rmse_state = np.sqrt(np.mean(err * err, axis=1))
    rmse_pos = np.sqrt(np.mean(err[:, 0:3] * err[:, 0:3], axis=1))
    return {
        "steps": int(x_true.shape[0]),
        "rmse_state_mean": float(rmse_state.mean()),
        "rmse_pos_mean": float(rmse_pos.mean()),
        "rmse_state": rmse_state,
        "rmse_pos": rmse_pos,
        "crmse_state": np.cumsum(rmse_state),
        "crmse_pos": np.cumsum(rmse_pos),
        "crmse_state_final": float(rmse_state.sum()),
        "crmse_pos_final": float(rmse_pos.sum()),
    }


def run_episode(
    scenario: ScenarioConfig,
    mode: str,
    seed: int,
    cfg: ExperimentConfig,
    params: mlp.MlpParams | None = None,
) -> RunRecord:
    """Run one closed-loop episode; a controller failure marks the record
    crashed at that step and preserves everything logged so far."""
    rng_sim, rng_noise = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
    rbp = cfg.rigid_body
    dt = cfg.controller.dt
    ref = ReferenceGenerator(scenario.trajectory, rbp, dt)
    x_true = State.from_vec(ref.state_at(0.0))
    sim = TruthSimulator(rbp, scenario.perturbation, cfg.substeps, rng_sim)
    sim.reset(x_true)
    ctx = ControllerContext(mode, cfg.controller, ref, rbp, params)

    n_steps = int(round(scenario.duration / dt))
    rows: list[tuple] = []
    crashed = False
    for k in range(n_steps):
        t = k * dt
        x_est = measure(x_true, cfg.noise, rng_noise)
        try:
            u, diag = ctx.control_step(x_est)
            x_next = sim.step(x_true, u.f, dt)
        except (SimlabError, ValueError):
            crashed = True
            break
        rows.append(
            (t, diag, u.f, x_est.as_vec(), ref.state_at(t), x_true.as_vec())
        )
        x_true = x_next
        if in_crash_envelope(x_true):
            crashed = True
            break

    n = len(rows)
    rec = RunRecord(
        scenario=scenario.name,
        mode=mode,
        seed=seed,
        t=np.array([r[0] for r in rows]),
        x_true=np.array([r[5] for r in rows]).reshape(n, 13),
        x_est=np.array([r[3] for r in rows]).reshape(n, 13),
        x_des=np.array([r[4] for r in rows]).reshape(n, 13),
        u=np.array([r[2] for r in rows]).reshape(n, 4),
        sigma=np.array([r[1].sigma_diag for r in rows]).reshape(n, 12),
        forward_error=np.array([r[1].forward_error for r in rows]),
        kkt=np.array([r[1].kkt for r in rows]),
        solve_ms=np.array([r[1].solve_ms for r in rows]),
        stage_cost=np.array([r[1].stage_cost for r in rows]),
        crashed=crashed,
        summary={},
    )
    metrics = compute_metrics(rec.x_true, rec.x_des)
    rec.summary = {
        "scenario": scenario.name,
        "mode": mode,
        "seed": seed,
        "crashed": crashed,
        "steps": metrics["steps"],
        "rmse_state_mean": metrics["rmse_state_mean"],
        "rmse_pos_mean": metrics["rmse_pos_mean"],
        "crmse_state_final": metrics["crmse_state_final"],
        "crmse_pos_final": metrics["crmse_pos_final"],
        "mean_forward_error": float(np.nanmean(rec.forward_error)) if n and np.any(np.isfinite(rec.forward_error)) else float("nan"),
    }
    return rec


def write_record_csv(rec: RunRecord, path: str | Path, timing: bool = False) -> None:
    """Per-iteration diagnostics CSV. solve_ms is zeroed unless timing=True so
    that fixed seeds reproduce identical bytes."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for i in range(rec.t.shape[0]):
            row = [repr(float(rec.t[i])), rec.mode]
            row.append(repr(float(rec.solve_ms[i])) if timing else repr(0.0))
            row.append(repr(float(rec.kkt[i])))
            row.append(repr(float(rec.forward_error[i])))
            row += [repr(float(v)) for v in rec.sigma[i]]
            row += [repr(float(v)) for v in rec.u[i]]
            row += [repr(float(v)) for v in rec.x_est[i]]
            row += [repr(float(v)) for v in rec.x_des[i]]
            row += [repr(float(v)) for v in rec.x_true[i]]
            row.append(repr(float(rec.stage_cost[i])))
            w.writerow(row)


def _aggregate(cells: dict) -> dict:
    """Mean/std per (scenario, mode) cell over seeds."""
    out: dict = {}
    for (scenario, mode), summaries in sorted(cells.items()):
        pos = np.array([s["rmse_pos_mean"] for s in summaries])
        state = np.array([s["rmse_state_mean"] for s in summaries])
        out.setdefault(scenario, {})[mode] = {
            "seeds": len(summaries),
            "crashes": int(sum(s["crashed"] for s in summaries)),
            "rmse_pos_mean": float(np.mean(pos)),
            "rmse_pos_std": float(np.std(pos)),
            "rmse_state_mean": float(np.mean(state)),
            "rmse_state_std": float(np.std(state)),
        }
    return out


def _markdown_table(agg: dict, modes: list[str]) -> str:
    lines = ["| Scenario | " + " | ".join(modes) + " |"]
    lines.append("|" + "---|" * (len(modes) + 1))
    for scenario, per_mode in agg.items():
        cells = []
        for m in modes:
            if m in per_mode:
                c = per_mode[m]
                txt = f"{c['rmse_pos_mean']:.4f} ± {c['rmse_pos_std']:.4f}"
                if c["crashes"]:
                    txt += f" ({c['crashes']} crash)"
                cells.append(txt)
            else:
                cells.append("-")
        lines.append(f"| {scenario} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def run_suite(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    params: mlp.MlpParams | None = None,
    timing: bool = False,
) -> int:
    """Execute the scenario matrix; write per-run CSVs, summary.json and a
    Markdown table of position RMSE. Returns 0 on success, 1 if any episode
    crashed or errored."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if params is None:
        needs_model = any(m != "nominal" for s in cfg.scenarios for m in s.modes)
        if needs_model:
            params = mlp.load_params(cfg.params_path)
    cells: dict = {}
    failures = 0
    all_modes: list[str] = []
    for scenario in cfg.scenarios:
        for mode in scenario.modes:
            if mode not in all_modes:
                all_modes.append(mode)
            for seed in scenario.seeds:
                rec = run_episode(scenario, mode, seed, cfg, params)
                write_record_csv(rec, out / f"{scenario.name}__{mode}__seed{seed}.csv", timing)
                cells.setdefault((scenario.name, mode), []).append(rec.summary)
                failures += int(rec.crashed)
    agg = _aggregate(cells)
    with open(out / "summary.json", "w") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "summary.md", "w") as f:
        f.write(_markdown_table(agg, all_modes))
    return 1 if failures else 0

"""Command-line experiment runner.

  simlab train <config>   generate the seeded dataset (if missing) and fit
                          the dynamics model; writes params and the training
                          curve next to --out
  simlab run <config>     execute the scenario matrix and write per-run CSVs,
                          summary.json and summary.md
  simlab bench <config>   time one adaptive control step and report the
                          median latency
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, mlp, runner
from .config import load_config
from .dynamics import State
from .errors import SimlabError
from .learner import TrainConfig, load_trajectory, train_offline
from .mpc import ControllerContext
from .reference import ReferenceGenerator


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training = TrainConfig(**{**cfg.training.__dict__, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(cfg.dataset.directory)
    existing = sorted(data_dir.glob("traj_*.csv")) if data_dir.is_dir() else []
    if existing:
        print(f"loading {len(existing)} trajectories from {data_dir}")
        dataset = [load_trajectory(p) for p in existing]
    else:
        print(f"generating dataset ({cfg.dataset.minutes:.1f} min of flight) -> {data_dir}")
        dataset = datagen.generate_dataset(cfg, data_dir)
    params, log = train_offline(dataset, cfg.training)
    params_path = out / Path(cfg.params_path).name
    mlp.save_params(params, params_path)
    log.save_csv(out / "training_curve.csv")
    print(f"holdout forward error: {log.holdout_loss[-1]:.6g}")
    print(f"wrote {params_path}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.mode is not None:
        for scenario in cfg.scenarios:
            scenario.modes = (args.mode,)
    if args.seed is not None:
        for scenario in cfg.scenarios:
            scenario.seeds = (args.seed,)
    params = None
    needs_model = any(m != "nominal" for s in cfg.scenarios for m in s.modes)
    if needs_model:
        params = mlp.load_params(args.params or cfg.params_path)
    code = runner.run_suite(cfg, args.out, params=params, timing=args.timing)
    print(f"suite written to {args.out} (exit {code})")
    return code


def _cmd_bench(args) -> int:
    cfg = load_config(args.config)
    if args.params:
        params = mlp.load_params(args.params)
    elif Path(cfg.params_path).exists():
        params = mlp.load_params(cfg.params_path)
    else:
        # latency does not depend on the weights being trained
        rng = np.random.default_rng(0)
        params = mlp.init_params([14, *cfg.training.hidden, 10], rng, cfg.training.elu_alpha)
        shift = np.zeros(14)
        scale = np.ones(14)
        params = mlp.MlpParams(params.weights, params.biases, cfg.training.elu_alpha, shift, scale)
    traj = cfg.scenarios[0].trajectory if cfg.scenarios else None
    from .reference import TrajectoryParams

    ref = ReferenceGenerator(traj or TrajectoryParams("ellipse"), cfg.rigid_body, cfg.controller.dt)
    ctx = ControllerContext("adaptive", cfg.controller, ref, cfg.rigid_body, params)
    x = State.from_vec(ref.state_at(0.0))
    times = []
    for k in range(args.steps):
        t0 = time.perf_counter()
        u, _ = ctx.control_step(x)
        times.append((time.perf_counter() - t0) * 1e3)
        x = State.from_vec(ref.state_at((k + 1) * cfg.controller.dt))
    times = np.array(times[2:])  # discard warm-up iterations
    report = {
        "steps": int(times.size),
        "median_ms": float(np.median(times)),
        "mean_ms": float(times.mean()),
        "p95_ms": float(np.percentile(times, 95)),
    }
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "bench.json", "w") as f:
            json.dump(report, f, indent=2)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="simlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="generate data and train the dynamics model")
    p_train.add_argument("config")
    p_train.add_argument("--seed", type=int, default=None, help="override the training seed")
    p_train.add_argument("--out", default="out", help="output directory")
    p_train.set_defaults(func=_cmd_train)

    p_run = sub.add_parser("run", help="run the scenario suite")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override scenario seeds")
    p_run.add_argument("--mode", default=None, choices=["nominal", "static", "static-ua", "static-ol", "adaptive"])
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--params", default=None, help="trained parameter file")
    p_run.add_argument("--timing", action="store_true", help="record wall-clock solve times (breaks byte determinism)")
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="time the adaptive control step")
    p_bench.add_argument("config")
    p_bench.add_argument("--params", default=None)
    p_bench.add_argument("--steps", type=int, default=200)
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SimlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

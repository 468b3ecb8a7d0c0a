"""Offline training and online adaptation of the learned dynamics.

The shared objective is the forward error: the squared mismatch between the
one-step model prediction and the observed next state, taken over the ten
regressed components (velocity, body rates, quaternion). The offline trainer
minimizes its mean with Adam over the whole network; the online adapter
applies averaged-gradient SGD to the last linear layer only, over a sliding
window of the most recent transitions.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .dynamics import CONTROL_DIM, STATE_DIM, State, model_input, model_target
from .errors import ConfigError

Array = np.ndarray

TRAJECTORY_HEADER = (
    ["t"]
    + ["px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
    + ["u1", "u2", "u3", "u4"]
)


@dataclass(frozen=True)
class Transition:
    """One observed step (x_prev, u_prev) -> x_next at time t seconds."""

    x_prev: State
    u_prev: Array
    x_next: State
    t: float


class ReplayWindow:
    """FIFO buffer of the most recent transitions; rejects corrupt samples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self._buf: deque[Transition] = deque(maxlen=capacity)
        self.rejected = 0

    def push(self, tr: Transition) -> bool:
        ok = (
            np.all(np.isfinite(tr.x_prev.as_vec()))
            and np.all(np.isfinite(tr.u_prev))
            and np.all(np.isfinite(tr.x_next.as_vec()))
            and np.isfinite(tr.t)
        )
        if not ok:
            self.rejected += 1
            return False
        self._buf.append(tr)
        return True

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def clear(self) -> None:
        self._buf.clear()


def _quaternion_residual(q_raw: Array, q_target: Array, normalized: bool) -> tuple[Array, Array]:
    """Residual on the predicted quaternion and its Jacobian w.r.t. q_raw.

    normalized mode renormalizes the prediction and flips its sign toward the
    target so the double cover is never penalized; raw mode is the literal
    componentwise difference.
    """
    if not normalized:
        return q_raw - q_target, np.eye(4)
    n = np.linalg.norm(q_raw)
    qn = q_raw / n
    sign = -1.0 if float(qn @ q_target) < 0.0 else 1.0
    r = sign * qn - q_target
    J = (sign / n) * (np.eye(4) - np.outer(qn, qn))
    return r, J


def forward_error(
    params: mlp.MlpParams,
    tr: Transition,
    dt: float,
    quaternion_loss: str = "normalized",
) -> tuple[float, mlp.Gradient]:
    """Squared one-step prediction error and its gradient in the parameters.

    Position is excluded: the Euler update does not depend on the network.
    """
    inp = model_input(tr.x_prev.as_vec(), tr.u_prev)
    y, cache = mlp.forward(params, inp)
    target = model_target(tr.x_next.as_vec())
    r_vw = y[0:6] - target[0:6]
    r_q, Jq = _quaternion_residual(y[6:10], target[6:10], quaternion_loss == "normalized")
    loss = float(r_vw @ r_vw + r_q @ r_q)
    if not np.isfinite(loss):
        raise ValueError("non-finite forward error")
    gout = np.concatenate([2.0 * r_vw, 2.0 * (Jq.T @ r_q)])
    grad, _ = mlp.backward(params, cache, gout)
    return loss, grad


def online_step(
    params: mlp.MlpParams,
    window: ReplayWindow,
    lr: float,
    dt: float,
    quaternion_loss: str = "normalized",
) -> mlp.MlpParams:
    """Averaged last-layer SGD over the window; the feature trunk is untouched."""
    if len(window) == 0:
        raise ValueError("online step on empty window")
    grads = [forward_error(params, tr, dt, quaternion_loss)[1] for tr in window]
    return mlp.sgd_last_layer_step(params, grads, lr)


# ---------------------------------------------------------------------------
# trajectories and offline training
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Uniformly sampled state/control log: t (n,), xs (n, 13), us (n, 4)."""

    t: Array
    xs: Array
    us: Array

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.us = np.asarray(self.us, dtype=np.float64)
        n = self.t.shape[0]
        if self.xs.shape != (n, STATE_DIM) or self.us.shape != (n, CONTROL_DIM):
            raise ValueError("trajectory array shapes disagree")
        if n > 1 and not np.all(np.diff(self.t) > 0.0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.t.shape[0]


def save_trajectory(traj: Trajectory, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJECTORY_HEADER)
        for i in range(len(traj)):
            row = [traj.t[i], *traj.xs[i], *traj.us[i]]
            w.writerow([repr(float(v)) for v in row])


def load_trajectory(path: str) -> Trajectory:
    rows = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != TRAJECTORY_HEADER:
            raise ConfigError(f"unexpected trajectory header in {path}")
        for row in r:
            rows.append([float(v) for v in row])
    arr = np.array(rows)
    return Trajectory(arr[:, 0], arr[:, 1:14], arr[:, 14:18])


def transition_arrays(dataset: list[Trajectory]) -> tuple[Array, Array]:
    """Stack every within-trajectory step into (inputs (M, 14), targets (M, 10))."""
    ins, outs = [], []
    for traj in dataset:
        if len(traj) < 2:
            continue
        ins.append(model_input(traj.xs[:-1], traj.us[:-1]))
        outs.append(model_target(traj.xs[1:]))
    if not ins:
        raise ValueError("dataset contains no transitions")
    return np.vstack(ins), np.vstack(outs)


def batch_forward_error(
    params: mlp.MlpParams, inputs: Array, targets: Array, quaternion_loss: str = "normalized"
) -> tuple[float, mlp.Gradient]:
    """Mean forward error over a batch plus the mean parameter gradient.

    Vectorized twin of forward_error; the two agree sample-by-sample.
    """
    y, cache = mlp.forward(params, inputs)
    r = np.empty_like(y)
    r[:, 0:6] = y[:, 0:6] - targets[:, 0:6]
    gout = np.empty_like(y)
    gout[:, 0:6] = 2.0 * r[:, 0:6]
    if quaternion_loss == "normalized":
        q_raw = y[:, 6:10]
        n = np.linalg.norm(q_raw, axis=1, keepdims=True)
        qn = q_raw / n
        sign = np.where(np.sum(qn * targets[:, 6:10], axis=1, keepdims=True) < 0.0, -1.0, 1.0)
        r[:, 6:10] = sign * qn - targets[:, 6:10]
        proj = r[:, 6:10] - qn * np.sum(qn * r[:, 6:10], axis=1, keepdims=True)
        gout[:, 6:10] = 2.0 * sign / n * proj
    else:
        r[:, 6:10] = y[:, 6:10] - targets[:, 6:10]
        gout[:, 6:10] = 2.0 * r[:, 6:10]
    losses = np.sum(r * r, axis=1)
    grad, _ = mlp.backward(params, cache, gout / inputs.shape[0])
    return float(losses.mean()), grad


def batch_forward_loss(params: mlp.MlpParams, inputs: Array, targets: Array,
                       quaternion_loss: str = "normalized") -> float:
    """Mean forward error without gradients (holdout evaluation)."""
    y, _ = mlp.forward(params, inputs)
    r = np.empty_like(y)
    r[:, 0:6] = y[:, 0:6] - targets[:, 0:6]
    if quaternion_loss == "normalized":
        qn = y[:, 6:10] / np.linalg.norm(y[:, 6:10], axis=1, keepdims=True)
        sign = np.where(np.sum(qn * targets[:, 6:10], axis=1, keepdims=True) < 0.0, -1.0, 1.0)
        r[:, 6:10] = sign * qn - targets[:, 6:10]
    else:
        r[:, 6:10] = y[:, 6:10] - targets[:, 6:10]
    return float(np.sum(r * r, axis=1).mean())


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (64, 32, 32)
    epochs: int = 1200
    batch_size: int = 512
    learning_rate: float = 1e-3
    # optional step schedule: multiply the rate by lr_decay_factor at each
    # fraction of the epoch budget (desk-scale stand-in for a long constant-
    # rate run; empty tuple keeps the rate constant)
    lr_decay_at: tuple[float, ...] = (0.6, 0.85)
    lr_decay_factor: float = 0.3
    holdout_fraction: float = 0.15
    elu_alpha: float = 1.0
    quaternion_loss: str = "normalized"
    seed: int = 1
    log_every: int = 10


@dataclass
class TrainingLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    holdout_loss: list[float] = field(default_factory=list)

    def save_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "holdout_loss"])
            for e, tl, hl in zip(self.epochs, self.train_loss, self.holdout_loss):
                w.writerow([e, repr(tl), repr(hl)])


def train_offline(dataset: list[Trajectory], cfg: TrainConfig) -> tuple[mlp.MlpParams, TrainingLog]:
    """Full-network Adam on shuffled mini-batches of one-step transitions.

    Deterministic for a fixed seed. Inputs are standardized from the training
    split; the final holdout loss is the pinned regression quantity.
    """
    if len(dataset) < 2:
        raise ValueError("need at least two trajectories for a holdout split")
    inputs, targets = transition_arrays(dataset)
    m = inputs.shape[0]
    if m < cfg.batch_size:
        raise ValueError(f"dataset has {m} transitions < batch size {cfg.batch_size}")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(m)
    n_hold = max(1, int(m * cfg.holdout_fraction))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    x_tr, y_tr = inputs[train_idx], targets[train_idx]
    x_ho, y_ho = inputs[hold_idx], targets[hold_idx]

    shift = x_tr.mean(axis=0)
    scale = np.maximum(x_tr.std(axis=0), 1e-8)
    params = mlp.init_params(
        [inputs.shape[1], *cfg.hidden, targets.shape[1]], rng, elu_alpha=cfg.elu_alpha
    )
    params = mlp.MlpParams(params.weights, params.biases, cfg.elu_alpha, shift, scale)
    state = mlp.AdamState.init_like(params)

    log = TrainingLog()
    n_train = x_tr.shape[0]
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay_factor ** sum(
            epoch >= int(frac * cfg.epochs) for frac in cfg.lr_decay_at
        )
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_train - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = batch_forward_error(params, x_tr[idx], y_tr[idx], cfg.quaternion_loss)
            params, state = mlp.adam_step(params, grad, state, lr)
            epoch_loss += loss
            n_batches += 1
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            log.epochs.append(epoch)
            log.train_loss.append(epoch_loss / max(n_batches, 1))
            log.holdout_loss.append(batch_forward_loss(params, x_ho, y_ho, cfg.quaternion_loss))
    return params, log

"""Uncertainty-aware nonlinear MPC.

One control step performs a single real-time SQP iteration: linearize the
dynamics along the shifted previous trajectory, condense the multiple-shooting
QP onto the control variables, add a Levenberg-Marquardt term, solve the
box-constrained QP with a primal active-set method, take the full step and
roll the states out through the nonlinear dynamics.

Orientation errors are tangent-space residuals (boxminus), so the stage cost
weighs 12 state components. The covariance produced by the unscented
propagation rescales those weights per the high-uncertainty-low-penalty
heuristic; by default the rescaled weights are renormalized to preserve the
total state weight, which makes a uniform covariance an exact no-op.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .dynamics import (
    CONTROL_DIM,
    STATE_DIM,
    TANGENT_DIM,
    Control,
    RigidBodyParams,
    State,
    analytic_jacobian,
    analytic_jacobian_all,
    analytic_step_vec,
    predict_jacobian,
    predict_vec,
    state_boxminus,
    state_boxplus,
)
from .errors import OcpError
from .learner import ReplayWindow, Transition, forward_error, online_step
from .reference import ReferenceGenerator
from .uncertainty import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_KAPPA,
    SigmaEnsemble,
    TangentGaussian,
    generate_sigma_points,
    propagate,
    reconstruct_moments,
)

Array = np.ndarray

MODES = ("nominal", "static", "static-ua", "static-ol", "adaptive")


# ---------------------------------------------------------------------------
# transcription
# ---------------------------------------------------------------------------

@dataclass
class OcpProblem:
    """One tracking OCP instance on the horizon grid."""

    horizon: int
    dt: float
    qx: Array  # (tangent_dim,) diagonal state weights
    qu: Array  # (control_dim,) diagonal input weights
    x_des: Array  # (horizon + 1, state_dim)
    u_des: Array  # (horizon, control_dim)
    u_min: Array
    u_max: Array
    lm_lambda: float = 1e-3

    def __post_init__(self):
        for name in ("qx", "qu", "x_des", "u_des", "u_min", "u_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.horizon < 1:
            raise OcpError("horizon must be >= 1")
        if np.any(self.qx <= 0.0) or np.any(self.qu <= 0.0):
            raise OcpError("cost weights must be positive")
        if self.x_des.shape[0] != self.horizon + 1 or self.u_des.shape[0] != self.horizon:
            raise OcpError("reference lengths do not match the horizon")
        if self.lm_lambda < 0.0:
            raise OcpError("lm_lambda must be non-negative")


@dataclass
class OcpSolution:
    states: Array  # (horizon + 1, state_dim); states[0] is the measured state
    controls: Array  # (horizon, control_dim)
    kkt_residual: float
    qp_iterations: int
    stage_costs: Array  # (horizon + 1,)


class ShootingHandle:
    """Dynamics interface for the shooting solver.

    Subclasses provide step/jacobian (and may override the *_all variants
    with batched implementations); the solver only uses the *_all forms.
    """

    state_dim = STATE_DIM
    tangent_dim = TANGENT_DIM
    control_dim = CONTROL_DIM
    boxplus = staticmethod(state_boxplus)
    boxminus = staticmethod(state_boxminus)

    def step(self, x: Array, u: Array) -> Array:
        raise NotImplementedError

    def jacobian(self, x: Array, u: Array) -> tuple[Array, Array]:
        raise NotImplementedError

    def step_all(self, xs: Array, us: Array) -> Array:
        return np.stack([self.step(x, u) for x, u in zip(xs, us)])

    def jacobian_all(self, xs: Array, us: Array) -> tuple[Array, Array]:
        pairs = [self.jacobian(x, u) for x, u in zip(xs, us)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


class NeuralShooting(ShootingHandle):
    """Learned-dynamics handle for the shooting solver."""

    def __init__(self, params: mlp.MlpParams, dt: float, u_hold: Array, residual: bool = False):
        self.params = params
        self.dt = dt
        self.u_hold = np.asarray(u_hold, dtype=np.float64)
        self.residual = residual

    def step(self, x: Array, u: Array) -> Array:
        return predict_vec(self.params, x, u, self.dt, residual=self.residual)

    def step_all(self, xs: Array, us: Array) -> Array:
        return predict_vec(self.params, xs, us, self.dt, residual=self.residual)

    def jacobian(self, x: Array, u: Array) -> tuple[Array, Array]:
        return predict_jacobian(self.params, x, u, self.dt, residual=self.residual)


class AnalyticShooting(ShootingHandle):
    """Nominal rigid-body handle (the physics-model baseline)."""

    def __init__(self, rbp: RigidBodyParams, dt: float):
        self.rbp = rbp
        self.dt = dt
        self.u_hold = rbp.hover_control()

    def step(self, x: Array, u: Array) -> Array:
        return analytic_step_vec(self.rbp, x, u, self.dt)

    def step_all(self, xs: Array, us: Array) -> Array:
        return analytic_step_vec(self.rbp, xs, us, self.dt)

    def jacobian(self, x: Array, u: Array) -> tuple[Array, Array]:
        return analytic_jacobian(self.rbp, x, u, self.dt)

    def jacobian_all(self, xs: Array, us: Array) -> tuple[Array, Array]:
        return analytic_jacobian_all(self.rbp, xs, us, self.dt)


def solve_box_qp(
    H: Array, g: Array, lb: Array, ub: Array, tol: float = 1e-10, max_iter: int | None = None
) -> tuple[Array, float, int]:
    """min 1/2 z'Hz + g'z  s.t. lb <= z <= ub, H symmetric positive definite.

    Primal active-set method with exact bound clipping; returns the solution,
    the KKT residual and the iteration count.
    """
    n = g.shape[0]
    if np.any(lb > ub):
        raise OcpError("infeasible box: lb > ub")
    z = np.clip(np.zeros(n), lb, ub)
    work = np.zeros(n, dtype=np.int8)  # -1 at lower, +1 at upper, 0 free
    if max_iter is None:
        max_iter = 20 * n + 20
    # tolerances are relative to the problem scale so extreme (but valid)
    # Gauss-Newton instances still terminate
    stall = 0
    prev_obj = np.inf
    for it in range(1, max_iter + 1):
        grad = H @ z + g
        free = work == 0
        d = np.zeros(n)
        if free.any():
            idx = np.flatnonzero(free)
            d[idx] = np.linalg.solve(H[np.ix_(idx, idx)], -grad[idx])
        obj = 0.5 * float(z @ (H @ z)) + float(g @ z)
        if obj > prev_obj - tol * (1.0 + abs(prev_obj)):
            stall += 1
            if stall > 3:
                break  # FP-level progress only; report the achieved KKT
        else:
            stall = 0
        prev_obj = min(prev_obj, obj)
        if np.max(np.abs(d), initial=0.0) <= tol * (1.0 + np.max(np.abs(z), initial=0.0)):
            # stationary on the working set; check bound multipliers
            tol_m = tol * (1.0 + np.max(np.abs(grad), initial=0.0))
            rel_low = (work == -1) & (grad < -tol_m)
            rel_up = (work == 1) & (grad > tol_m)
            if not rel_low.any() and not rel_up.any():
                break
            score = np.where(rel_low, -grad, 0.0) + np.where(rel_up, grad, 0.0)
            work[int(np.argmax(score))] = 0
            continue
        # longest feasible step along d
        alpha = 1.0
        blocking = -1
        bound_side = 0
        moving = np.flatnonzero(np.abs(d) > 1e-14)
        for i in moving:
            if d[i] > 0.0:
                a = (ub[i] - z[i]) / d[i]
                side = 1
            else:
                a = (lb[i] - z[i]) / d[i]
                side = -1
            if a < alpha:
                alpha = max(a, 0.0)
                blocking = i
                bound_side = side
        z = z + alpha * d
        if blocking >= 0:
            z[blocking] = ub[blocking] if bound_side > 0 else lb[blocking]
            work[blocking] = bound_side
    else:
        raise OcpError("box QP did not converge")
    z = np.clip(z, lb, ub)
    grad = H @ z + g
    at_lb = work == -1
    at_ub = work == 1
    kkt = max(
        float(np.max(np.abs(grad[work == 0]), initial=0.0)),
        float(np.max(np.maximum(0.0, -grad[at_lb]), initial=0.0)),
        float(np.max(np.maximum(0.0, grad[at_ub]), initial=0.0)),
    )
    return z, kkt, it


def _rti_iteration(problem: OcpProblem, dynamics, x0: Array, xs: Array, us: Array):
    """One Gauss-Newton SQP iteration with full condensing onto the controls."""
    N = problem.horizon
    nt = dynamics.tangent_dim
    nu = dynamics.control_dim
    nz = N * nu

    ex = dynamics.boxminus(xs, problem.x_des)  # (N+1, nt) tracking residuals
    eu = us - problem.u_des

    As, Bs = dynamics.jacobian_all(xs[:-1], us)
    if not (np.all(np.isfinite(As)) and np.all(np.isfinite(Bs))):
        ok = np.isfinite(As.reshape(N, -1)).all(axis=1) & np.isfinite(Bs.reshape(N, -1)).all(axis=1)
        raise OcpError(f"non-finite linearization at stage {int(np.flatnonzero(~ok)[0])}")
    defects = dynamics.boxminus(dynamics.step_all(xs[:-1], us), xs[1:])

    # sensitivities of every shooting node w.r.t. the stacked control update
    M = dynamics.boxminus(x0, xs[0])  # initial-condition defect
    G = np.zeros((nt, nz))
    H = np.diag(np.tile(problem.qu, N)) + problem.lm_lambda * np.eye(nz)
    g = (problem.qu * eu).ravel()
    for i in range(N):
        M = As[i] @ M + defects[i]
        G = As[i] @ G
        G[:, i * nu : (i + 1) * nu] += Bs[i]
        WG = problem.qx[:, None] * G
        H += G.T @ WG
        g += G.T @ (problem.qx * (ex[i + 1] + M))
    lb = (np.tile(problem.u_min, (N, 1)) - us).ravel()
    ub = (np.tile(problem.u_max, (N, 1)) - us).ravel()
    du, kkt, qp_iters = solve_box_qp(H, g, lb, ub)

    us_new = us + du.reshape(N, nu)
    xs_new = np.empty_like(xs)
    xs_new[0] = x0
    for i in range(N):
        xs_new[i + 1] = dynamics.step(xs_new[i], us_new[i])
    return xs_new, us_new, kkt, qp_iters


def _stage_costs(problem: OcpProblem, dynamics, xs: Array, us: Array) -> Array:
    ex = dynamics.boxminus(xs, problem.x_des)
    costs = 0.5 * np.sum(ex * ex * problem.qx, axis=1)
    eu = us - problem.u_des
    costs[:-1] += 0.5 * np.sum(eu * eu * problem.qu, axis=1)
    return costs


def solve_rti(
    problem: OcpProblem,
    dynamics,
    x0: Array,
    warm_start: OcpSolution | None = None,
    iterations: int = 1,
) -> OcpSolution:
    """Real-time iteration: one (or more) SQP steps from the shifted warm start.

    Cold starts hold the measured state with the handle's hold control. The
    returned states are the exact nonlinear rollout of the returned controls.
    """
    N = problem.horizon
    x0 = np.asarray(x0, dtype=np.float64)
    if warm_start is None:
        xs = np.tile(x0, (N + 1, 1))
        us = np.tile(dynamics.u_hold, (N, 1))
    else:
        xs = np.vstack([warm_start.states[1:], warm_start.states[-1:]])
        us = np.vstack([warm_start.controls[1:], warm_start.controls[-1:]])
    kkt, qp_iters = np.inf, 0
    for _ in range(iterations):
        xs, us, kkt, qp_iters = _rti_iteration(problem, dynamics, x0, xs, us)
    return OcpSolution(xs, us, kkt, qp_iters, _stage_costs(problem, dynamics, xs, us))


# ---------------------------------------------------------------------------
# uncertainty weighting (cost reshaping heuristic)
# ---------------------------------------------------------------------------

def apply_uncertainty_weighting(
    qx: Array,
    sigma_diag: Array,
    sigma_min: float = 1e-8,
    sigma_max: float = 1e2,
    renormalize: bool = True,
) -> Array:
    """Divide each state weight by its (clamped) predicted variance.

    The renormalized form preserves the total state weight, so any uniform
    variance vector is bit-exactly neutral; the raw form is the literal
    inverse-diagonal update.
    """
    c = np.clip(np.asarray(sigma_diag, dtype=np.float64), sigma_min, sigma_max)
    if not renormalize:
        return qx / c
    rel = c / c[0]
    out = qx / rel
    return out * (qx.sum() / out.sum())


# ---------------------------------------------------------------------------
# controller context: one object per closed-loop episode
# ---------------------------------------------------------------------------

@dataclass
class ControllerConfig:
    horizon: int = 20
    dt: float = 0.05
    qx: Array = field(
        default_factory=lambda: np.array(
            [20.0, 20.0, 20.0, 5.0, 5.0, 5.0, 10.0, 10.0, 10.0, 1.0, 1.0, 1.0]
        )
    )
    qu: Array = field(default_factory=lambda: np.full(4, 0.1))
    lm_lambda: float = 1e-3
    uncertainty_weighting: str = "normalized"  # or "raw"
    sigma_clamp: tuple[float, float] = (1e-8, 1e2)
    ut_alpha: float = DEFAULT_ALPHA
    ut_kappa: float = DEFAULT_KAPPA
    ut_beta: float = DEFAULT_BETA
    sigma0: float = 1e-4  # initial diagonal tangent variance
    # prediction-only propagation has no correcting update, so the recursive
    # mode diverges through any slightly unstable learned Jacobian; the prior
    # is re-seeded each iteration by default
    ut_reset_each_step: bool = True
    process_noise: float = 0.0
    online_lr: float = 2e-4
    online_batch: int = 20
    quaternion_loss: str = "normalized"
    residual_model: bool = False


@dataclass
class StepDiagnostics:
    t: float
    mode: str
    solve_ms: float
    kkt: float
    qp_iterations: int
    forward_error: float
    sigma_diag: Array
    stage_cost: float


class ControllerContext:
    """Single-owner closed-loop state: warm start, covariance, replay window.

    Must be stepped from one thread; each call to control_step consumes the
    newest state estimate and returns the control to actuate.
    """

    def __init__(
        self,
        mode: str,
        cfg: ControllerConfig,
        reference: ReferenceGenerator,
        rbp: RigidBodyParams,
        params: mlp.MlpParams | None = None,
    ):
        if mode not in MODES:
            raise OcpError(f"unknown controller mode '{mode}'")
        if mode != "nominal" and params is None:
            raise OcpError(f"mode '{mode}' needs trained model parameters")
        self.mode = mode
        self.cfg = cfg
        self.reference = reference
        self.rbp = rbp
        self.params = params
        self.uses_ua = mode in ("static-ua", "adaptive")
        self.uses_ol = mode in ("static-ol", "adaptive")
        if mode == "nominal":
            self.dynamics = AnalyticShooting(rbp, cfg.dt)
        else:
            self.dynamics = NeuralShooting(
                params, cfg.dt, rbp.hover_control(), residual=cfg.residual_model
            )
        self.window = ReplayWindow(cfg.online_batch)
        self.sigma_cov = cfg.sigma0 * np.eye(TANGENT_DIM)
        self.warm: OcpSolution | None = None
        self.last_x: State | None = None
        self.last_u: Array | None = None
        self.t = 0.0

    def control_step(self, x_hat: State) -> tuple[Control, StepDiagnostics]:
        cfg = self.cfg
        xv = x_hat.as_vec()
        qx = cfg.qx
        sigma_diag = np.full(TANGENT_DIM, np.nan)
        fe = np.nan

        tr = None
        if self.last_x is not None and self.params is not None:
            tr = Transition(self.last_x, self.last_u, x_hat, self.t)
            fe = forward_error(self.params, tr, cfg.dt, cfg.quaternion_loss)[0]

        if self.uses_ua:
            prior_cov = cfg.sigma0 * np.eye(TANGENT_DIM) if cfg.ut_reset_each_step else self.sigma_cov
            if self.last_u is not None:
                ens = generate_sigma_points(
                    TangentGaussian(xv, prior_cov), cfg.ut_alpha, cfg.ut_kappa, cfg.ut_beta
                )
                ens = propagate(self.params, ens, self.last_u, cfg.dt)
                post = reconstruct_moments(ens)
                cov = post.cov + cfg.process_noise * np.eye(TANGENT_DIM)
                self.sigma_cov = cov
            else:
                cov = prior_cov
            sigma_diag = np.diag(cov).copy()
            qx = apply_uncertainty_weighting(
                cfg.qx,
                sigma_diag,
                cfg.sigma_clamp[0],
                cfg.sigma_clamp[1],
                renormalize=(cfg.uncertainty_weighting == "normalized"),
            )

        if self.uses_ol and tr is not None:
            self.window.push(tr)
            if len(self.window) >= cfg.online_batch:
                self.params = online_step(
                    self.params, self.window, cfg.online_lr, cfg.dt, cfg.quaternion_loss
                )
                self.dynamics.params = self.params

        x_des, u_des = self.reference.window(self.t, cfg.horizon)
        problem = OcpProblem(
            cfg.horizon,
            cfg.dt,
            qx,
            cfg.qu,
            x_des,
            u_des,
            np.full(CONTROL_DIM, self.rbp.f_min),
            np.full(CONTROL_DIM, self.rbp.f_max),
            cfg.lm_lambda,
        )
        t0 = time.perf_counter()
        sol = solve_rti(problem, self.dynamics, xv, self.warm)
        solve_ms = (time.perf_counter() - t0) * 1e3
        self.warm = sol
        u0 = sol.controls[0].copy()
        diag = StepDiagnostics(
            t=self.t,
            mode=self.mode,
            solve_ms=solve_ms,
            kkt=sol.kkt_residual,
            qp_iterations=sol.qp_iterations,
            forward_error=fe,
            sigma_diag=sigma_diag,
            stage_cost=float(sol.stage_costs[0]),
        )
        self.last_x = x_hat
        self.last_u = u0
        self.t += cfg.dt
        return Control(u0), diag

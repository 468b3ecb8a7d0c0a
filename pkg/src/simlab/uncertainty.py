"""Unscented-Transform propagation of a tangent-space Gaussian through the
learned dynamics.

The covariance lives in the 12-dim tangent space (the quaternion block is a
3-dim rotation vector), so sigma points are placed with the state boxplus and
moments are recovered with boxminus. The generic helpers accept arbitrary
boxplus/boxminus callables and dimensions, which the tests use to exercise
the transform on plain Euclidean maps.

No measurement update exists: this is prediction-only propagation of
aleatoric uncertainty. Process-noise inflation defaults to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import mlp
from .dynamics import STATE_DIM, TANGENT_DIM, predict_vec, state_boxminus, state_boxplus
from .errors import DynamicsError
from .manifold import boxminus as quat_boxminus
from .manifold import boxplus as quat_boxplus
from .manifold import quat_normalize

Array = np.ndarray

# spread/prior hyper-parameters for a Gaussian prior
DEFAULT_ALPHA = 0.001
DEFAULT_KAPPA = 1.0
DEFAULT_BETA = 2.0

_CHOLESKY_JITTER = 1e-12


@dataclass(frozen=True)
class TangentGaussian:
    """State-space Gaussian: mean state vector (13) plus 12x12 tangent covariance."""

    mean: Array
    cov: Array

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (STATE_DIM,) or cov.shape != (TANGENT_DIM, TANGENT_DIM):
            raise ValueError("bad TangentGaussian shapes")
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class SigmaEnsemble:
    """2n+1 sigma states with their mean/covariance weights."""

    points: Array  # (2n+1, point_dim)
    mean_weights: Array
    cov_weights: Array

    @property
    def n(self) -> int:
        return (self.points.shape[0] - 1) // 2


def ut_weights(n: int, alpha: float, kappa: float, beta: float) -> tuple[float, Array, Array]:
    """Scaled-UT weights; W0_m is completed so the mean weights sum to one."""
    lam = alpha * alpha * (n + kappa) - n
    wi = 1.0 / (2.0 * (n + lam))
    wm = np.full(2 * n + 1, wi)
    wc = np.full(2 * n + 1, wi)
    wm[0] = 1.0 - 2.0 * n * wi
    wc[0] = wm[0] + (1.0 - alpha * alpha + beta)
    return lam, wm, wc


def cholesky_with_jitter(cov: Array) -> Array:
    """Lower Cholesky factor, retried once with a small diagonal jitter."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(cov + _CHOLESKY_JITTER * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive semi-definite") from exc


def sigma_points_generic(
    mean,
    cov: Array,
    alpha: float,
    kappa: float,
    beta: float,
    box_plus: Callable,
) -> SigmaEnsemble:
    """Sigma points for any manifold described by a boxplus operator."""
    n = cov.shape[0]
    lam, wm, wc = ut_weights(n, alpha, kappa, beta)
    L = cholesky_with_jitter(cov)
    spread = np.sqrt(n + lam)
    mean = np.asarray(mean, dtype=np.float64)
    pts = np.empty((2 * n + 1,) + mean.shape)
    pts[0] = mean
    for i in range(n):
        col = spread * L[:, i]
        pts[1 + i] = box_plus(mean, -col)
        pts[1 + n + i] = box_plus(mean, col)
    return SigmaEnsemble(pts, wm, wc)


def moments_generic(
    e: SigmaEnsemble,
    box_plus: Callable,
    box_minus: Callable,
) -> tuple[Array, Array]:
    """Anchored weighted mean and tangent covariance of an ensemble.

    The mean uses the single-pass formula anchored at point 0; the covariance
    is the weighted sum of outer products of tangent residuals, symmetrized.
    """
    anchor = e.points[0]
    deltas = box_minus(e.points, anchor)
    mean = box_plus(anchor, e.mean_weights @ deltas)
    resid = box_minus(e.points, mean)
    cov = (e.cov_weights[:, None] * resid).T @ resid
    return mean, 0.5 * (cov + cov.T)


def generate_sigma_points(
    g: TangentGaussian,
    alpha: float = DEFAULT_ALPHA,
    kappa: float = DEFAULT_KAPPA,
    beta: float = DEFAULT_BETA,
) -> SigmaEnsemble:
    """25 sigma states from a state-space Gaussian (n = 12)."""
    return sigma_points_generic(g.mean, g.cov, alpha, kappa, beta, state_boxplus)


def propagate_points(fn: Callable[[Array], Array], e: SigmaEnsemble) -> SigmaEnsemble:
    """Map every sigma point through fn, carrying the weights over.

    The evaluations are independent (fn must be pure); they are run in a
    fixed order so results do not depend on scheduling.
    """
    pts = np.stack([fn(p) for p in e.points])
    return SigmaEnsemble(pts, e.mean_weights, e.cov_weights)


def propagate(params: mlp.MlpParams, e: SigmaEnsemble, u: Array, dt: float) -> SigmaEnsemble:
    """Push the ensemble one step through the learned dynamics."""
    return propagate_points(lambda p: predict_vec(params, p, u, dt), e)


def reconstruct_moments(e: SigmaEnsemble) -> TangentGaussian:
    """Posterior mean and covariance of a state ensemble.

    Euclidean blocks take the direct weighted mean; the quaternion block uses
    the anchored tangent formula. Covariance residuals are full state
    boxminus against the reconstructed mean.
    """
    pts = e.points
    wm = e.mean_weights
    mean = np.empty(STATE_DIM)
    mean[0:3] = wm @ pts[:, 0:3]
    mean[3:6] = wm @ pts[:, 3:6]
    mean[10:13] = wm @ pts[:, 10:13]
    q0 = pts[0, 6:10]
    dq = wm @ quat_boxminus(pts[:, 6:10], q0)
    mean[6:10] = quat_normalize(quat_boxplus(q0, dq))
    resid = state_boxminus(pts, mean)
    cov = (e.cov_weights[:, None] * resid).T @ resid
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        raise DynamicsError("non-finite covariance after propagation")
    return TangentGaussian(mean, cov)


def sample_gaussian(g: TangentGaussian, n_samples: int, rng: np.random.Generator) -> Array:
    """Draw state samples x = mean boxplus N(0, cov); used by Monte-Carlo checks."""
    L = cholesky_with_jitter(g.cov)
    xi = rng.standard_normal((n_samples, TANGENT_DIM)) @ L.T
    return state_boxplus(g.mean, xi)


def empirical_moments(samples: Array, mean_guess: Array | None = None) -> TangentGaussian:
    """Sample mean/covariance of state samples in tangent coordinates.

    Iterates the tangent mean a few times from mean_guess (or the first
    sample) so the anchor bias of large ensembles is negligible.
    """
    mean = np.array(samples[0] if mean_guess is None else mean_guess, dtype=np.float64)
    for _ in range(4):
        deltas = state_boxminus(samples, mean)
        mean = state_boxplus(mean, deltas.mean(axis=0))
    resid = state_boxminus(samples, mean)
    cov = resid.T @ resid / (samples.shape[0] - 1)
    return TangentGaussian(mean, 0.5 * (cov + cov.T))

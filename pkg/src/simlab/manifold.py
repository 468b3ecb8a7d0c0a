"""Quaternion algebra and SO(3) tangent-space operators.

Conventions used everywhere in this package:
  - quaternions are scalar-first [w, x, y, z], Hamilton product;
  - a tangent vector is a full rotation vector: its norm is the rotation
    angle in radians (the half-angle split lives inside boxplus/boxminus);
  - q and -q denote the same rotation; operators that need a unique
    representative canonicalize to w >= 0 first.

All functions accept (..., 4) / (..., 3) arrays and broadcast over leading
dimensions.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

# below this angle the exp/log series branches are used to avoid 0/0
_SMALL_ANGLE = 1e-6


def quat_identity() -> Array:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_norm(q: Array) -> Array:
    return np.linalg.norm(q, axis=-1)


def quat_conj(q: Array) -> Array:
    """Conjugate; equals the inverse for unit quaternions."""
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_normalize(q: Array) -> Array:
    """Scale to unit norm. Raises on (near-)zero input."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-9):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q: Array) -> Array:
    """Flip sign so the scalar part is non-negative (double-cover representative)."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_mul(p: Array, q: Array) -> Array:
    """Hamilton product p ⊗ q (scalar-first). Norm is multiplicative."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_left_matrix(q: Array) -> Array:
    """4x4 matrix L(q) with L(q) @ r == q ⊗ r. Single quaternion only."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def quat_exp(v: Array) -> Array:
    """Exponential map: rotation vector v -> unit quaternion [cos|v|, sin|v|*v/|v|].

    The scalar pre-factor of the general quaternion exponential is fixed to 1
    (pure-vector input); the rotation angle equals |v|.
    """
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < _SMALL_ANGLE
    # sin(t)/t with series fallback: 1 - t^2/6
    safe = np.where(small, 1.0, theta)
    s = np.where(small, 1.0 - theta * theta / 6.0, np.sin(safe) / safe)
    w = np.cos(theta)
    return np.concatenate([w, s * v], axis=-1)


def quat_log(q: Array) -> Array:
    """Logarithm map: unit quaternion -> rotation vector u*theta, theta in [0, pi).

    Non-unit inputs are normalized first; only the rotation part is returned
    (the log|q| scalar is dropped). Inverse of quat_exp for |v| < pi. The sign
    of q is NOT canonicalized here; boxminus does that for tangent differences.
    """
    q = quat_normalize(q)
    w = q[..., :1]
    qv = q[..., 1:]
    s = np.linalg.norm(qv, axis=-1, keepdims=True)
    theta = np.arctan2(s, w)
    # series branch only near the identity; near the antipode theta/s is finite
    small = (s < _SMALL_ANGLE) & (w > 0.0)
    safe = np.where(s < 1e-300, 1.0, s)
    scale = np.where(small, 1.0 + s * s / 6.0, theta / safe)
    return scale * qv


def boxplus(q: Array, delta: Array) -> Array:
    """Perturb unit quaternion q by tangent rotation vector delta: q ⊗ exp(delta/2)."""
    return quat_mul(q, quat_exp(np.asarray(delta, dtype=np.float64) / 2.0))


def boxminus(q1: Array, q2: Array) -> Array:
    """Tangent difference 2*log(q2^* ⊗ q1); inverse of boxplus for |delta| < pi.

    The relative quaternion is canonicalized to w >= 0 first, so antipodal
    representations of the same rotation give identical differences.
    """
    return 2.0 * quat_log(quat_canonical(quat_mul(quat_conj(q2), q1)))


def quat_to_rotmat_normalized(q: Array) -> Array:
    """Rotation matrix from a possibly non-unit quaternion.

    Builds the homogeneous quadratic matrix Q and divides by |q|^2, which is
    exactly orthogonal with unit determinant for any nonzero input.
    Single quaternion only.
    """
    q = np.asarray(q, dtype=np.float64)
    n2 = float(q @ q)
    if n2 < 1e-18:
        raise ValueError("degenerate quaternion: |q| < 1e-9")
    w, x, y, z = q
    Q = np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )
    return Q / n2


def cross3(a: Array, b: Array) -> Array:
    """Cross product over the last axis; avoids np.cross's axis juggling."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def rotate_vector(q: Array, v: Array) -> Array:
    """Apply rotation q to 3-vector v, i.e. R(q) @ v for unit q. Broadcasts."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., :1]
    # R v = v + 2 w (u x v) + 2 u x (u x v)
    uv = cross3(u, v)
    return v + 2.0 * w * uv + 2.0 * cross3(u, uv)


def rotmat_to_quat(R: Array) -> Array:
    """Unit quaternion (w >= 0) from a rotation matrix, numerically stable split."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_canonical(quat_normalize(q))


def skew(v: Array) -> Array:
    """3x3 cross-product matrix: skew(v) @ w == v x w."""
    vx, vy, vz = v
    return np.array([[0.0, -vz, vy], [vz, 0.0, -vx], [-vy, vx, 0.0]])

"""Small dense network with ELU hidden layers, exact backprop, Adam and
last-layer SGD.

The final layer is always linear, so the network factors as
``output = W_last @ features + b_last`` with ``features`` the activation of
the frozen trunk; the online adapter exploits exactly that split. Inputs are
standardized by a per-component affine transform stored with the parameters.
All math is float64 and deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

Array = np.ndarray

_FORMAT = "simlab-mlp"
_VERSION = 1


@dataclass(frozen=True)
class MlpParams:
    """Layered weights/biases plus the input standardization constants.

    weights[k] has shape (out_k, in_k); consecutive layers chain. All hidden
    layers use ELU, the final layer is linear.
    """

    weights: tuple[Array, ...]
    biases: tuple[Array, ...]
    elu_alpha: float = 1.0
    in_shift: Array = field(default=None)  # type: ignore[assignment]
    in_scale: Array = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases layer count mismatch")
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[0] != self.weights[k + 1].shape[1]:
                raise ValueError(f"layer {k}->{k + 1} shape mismatch")
        din = self.weights[0].shape[1]
        if self.in_shift is None:
            object.__setattr__(self, "in_shift", np.zeros(din))
        if self.in_scale is None:
            object.__setattr__(self, "in_scale", np.ones(din))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def activations(self) -> tuple[str, ...]:
        return ("elu",) * (self.n_layers - 1) + ("linear",)


@dataclass
class Gradient:
    """Per-parameter partials, shape-congruent with an MlpParams."""

    weights: list[Array]
    biases: list[Array]

    def scaled(self, a: float) -> "Gradient":
        return Gradient([a * w for w in self.weights], [a * b for b in self.biases])

    def add_(self, other: "Gradient") -> "Gradient":
        for w, ow in zip(self.weights, other.weights):
            w += ow
        for b, ob in zip(self.biases, other.biases):
            b += ob
        return self


def init_params(layer_sizes: list[int], rng: np.random.Generator, elu_alpha: float = 1.0) -> MlpParams:
    """He-style uniform init scaled by fan-in; biases start at zero."""
    weights, biases = [], []
    for din, dout in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / din)
        weights.append(rng.uniform(-bound, bound, size=(dout, din)))
        biases.append(np.zeros(dout))
    return MlpParams(tuple(weights), tuple(biases), elu_alpha=elu_alpha)


def elu(x: Array, alpha: float = 1.0) -> Array:
    return np.where(x > 0.0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_prime(x: Array, alpha: float = 1.0) -> Array:
    # d/dx ELU = 1 for x > 0, ELU(x) + alpha otherwise
    return np.where(x > 0.0, 1.0, alpha * np.expm1(np.minimum(x, 0.0)) + alpha)


def forward(params: MlpParams, x: Array) -> tuple[Array, tuple[list[Array], list[Array]]]:
    """Evaluate the network; returns (output, cache) for a later backward pass.

    x may be a single (d,) vector or a (B, d) batch. The cache holds the
    per-layer inputs and pre-activations.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != params.input_dim:
        raise ValueError(f"input dim {a.shape[1]} != expected {params.input_dim}")
    a = (a - params.in_shift) / params.in_scale
    acts = [a]  # input seen by every layer
    pres = []  # pre-activation of every layer
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pres.append(z)
        if k != last:
            a = elu(z, params.elu_alpha)
            acts.append(a)
    return (pres[-1][0] if single else pres[-1]), (acts, pres)


def _elu_prime_cached(z: Array, a: Array, alpha: float) -> Array:
    # on the negative branch ELU' = ELU + alpha, so reuse the stored activation
    return np.where(z > 0.0, 1.0, a + alpha)


def backward(params: MlpParams, cache, output_grad: Array) -> tuple[Gradient, Array]:
    """Exact reverse-mode gradient of sum_b output_grad[b] . output[b].

    Returns (parameter gradient, gradient w.r.t. the raw, unstandardized
    input). output_grad must match the batch shape of the forward call.
    """
    acts, pres = cache
    if len(pres) != params.n_layers:
        raise ValueError("cache does not match network depth")
    g = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))
    if g.shape[1] != params.output_dim:
        raise ValueError("output_grad dim mismatch")
    if g.shape[0] != acts[0].shape[0]:
        raise ValueError("stale cache: batch size mismatch")
    dW: list[Array] = [None] * params.n_layers  # type: ignore[list-item]
    db: list[Array] = [None] * params.n_layers  # type: ignore[list-item]
    delta = g
    for k in range(params.n_layers - 1, -1, -1):
        if k != params.n_layers - 1:
            delta = delta * _elu_prime_cached(pres[k], acts[k + 1], params.elu_alpha)
        dW[k] = delta.T @ acts[k]
        db[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k]
    din = delta / params.in_scale
    return Gradient(dW, db), (din[0] if np.asarray(output_grad).ndim == 1 else din)


def input_jacobian(params: MlpParams, cache) -> Array:
    """(out_dim, in_dim) Jacobian of the output w.r.t. the raw input.

    Requires a cache from a single-sample forward call.
    """
    acts, pres = cache
    if acts[0].shape[0] != 1:
        raise ValueError("input_jacobian needs a single-sample cache")
    M = params.weights[-1]
    for k in range(params.n_layers - 2, -1, -1):
        M = (M * _elu_prime_cached(pres[k][0], acts[k + 1][0], params.elu_alpha)) @ params.weights[k]
    return M / params.in_scale


@dataclass
class AdamState:
    m: list[Array]
    v: list[Array]
    step: int = 0

    @staticmethod
    def init_like(params: MlpParams) -> "AdamState":
        flat = list(params.weights) + list(params.biases)
        return AdamState(
            m=[np.zeros_like(p) for p in flat],
            v=[np.zeros_like(p) for p in flat],
            step=0,
        )


def adam_step(
    params: MlpParams,
    grad: Gradient,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update over every layer; returns new values."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    flat_g = list(grad.weights) + list(grad.biases)
    flat_p = list(params.weights) + list(params.biases)
    new_flat = []
    for i, (p, g) in enumerate(zip(flat_p, flat_g)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        new_flat.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    n = len(params.weights)
    new = replace(params, weights=tuple(new_flat[:n]), biases=tuple(new_flat[n:]))
    return new, state


def sgd_last_layer_step(params: MlpParams, batch_grads: list[Gradient], lr: float) -> MlpParams:
    """Averaged-gradient SGD restricted to the final linear layer.

    Every other layer is returned untouched (same arrays), which keeps the
    feature trunk bit-identical under online adaptation.
    """
    if not batch_grads:
        raise ValueError("empty gradient batch")
    inv = 1.0 / len(batch_grads)
    gw = sum(g.weights[-1] for g in batch_grads) * inv
    gb = sum(g.biases[-1] for g in batch_grads) * inv
    weights = params.weights[:-1] + (params.weights[-1] - lr * gw,)
    biases = params.biases[:-1] + (params.biases[-1] - lr * gb,)
    return replace(params, weights=weights, biases=biases)


def trunk_digest(params: MlpParams) -> str:
    """SHA-256 over every layer except the last; detects trunk mutation."""
    import hashlib

    h = hashlib.sha256()
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h.update(np.ascontiguousarray(w).tobytes())
        h.update(np.ascontiguousarray(b).tobytes())
    h.update(np.ascontiguousarray(params.in_shift).tobytes())
    h.update(np.ascontiguousarray(params.in_scale).tobytes())
    return h.hexdigest()


def save_params(params: MlpParams, path: str) -> None:
    """Write a versioned JSON container; float64-lossless via repr round-trip."""
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "elu_alpha": params.elu_alpha,
        "activations": list(params.activations()),
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
        "in_shift": params.in_shift.tolist(),
        "in_scale": params.in_scale.tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_params(path: str) -> MlpParams:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != _FORMAT or doc.get("version") != _VERSION:
        raise ValueError(f"unsupported parameter file: {path}")
    weights = tuple(np.array(layer["weight"], dtype=np.float64) for layer in doc["layers"])
    biases = tuple(np.array(layer["bias"], dtype=np.float64) for layer in doc["layers"])
    return MlpParams(
        weights,
        biases,
        elu_alpha=float(doc["elu_alpha"]),
        in_shift=np.array(doc["in_shift"], dtype=np.float64),
        in_scale=np.array(doc["in_scale"], dtype=np.float64),
    )

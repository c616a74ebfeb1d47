"""Dense float64 numeric kernel: layer forward/backward rules, losses, Adam,
and a finite-difference gradient checker.

Conventions used throughout the package:

- a "matrix" is a 2-D C-contiguous float64 ndarray; batches are stacked in rows
  (row-major), so an affine layer computes ``y = x @ w + b`` with ``w`` of shape
  (fan_in, fan_out) and ``b`` of shape (fan_out,);
- backward functions take the upstream gradient with the same shape as the
  forward output and return input/parameter gradients with matching shapes;
- relu uses the subgradient-0 convention at exactly 0 (strict ``x > 0`` mask);
- losses are per-instance, vectorized; trainers sum them (no 1/B factor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "as_matrix",
    "affine_forward",
    "affine_backward",
    "relu_forward",
    "relu_backward",
    "residual_forward",
    "residual_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "sigmoid",
    "logistic_loss",
    "squared_loss",
    "ParamStore",
    "AdamState",
    "adam_step",
    "global_grad_norm",
    "clip_grads_",
    "FiniteDiffReport",
    "finite_diff_check",
]


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array; reject anything else."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def _check_dims(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


# ---------------------------------------------------------------------------
# layer rules


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b for a row batch x of shape (n, fan_in)."""
    _check_dims(x.ndim == 2 and w.ndim == 2, "affine expects 2-D x and w")
    _check_dims(x.shape[1] == w.shape[0],
                f"affine fan_in mismatch: x has {x.shape[1]}, w has {w.shape[0]}")
    _check_dims(b.shape == (w.shape[1],),
                f"affine bias shape {b.shape} != ({w.shape[1]},)")
    return x @ w + b


def affine_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of an affine layer: returns (dx, dw, db)."""
    _check_dims(dy.shape == (x.shape[0], w.shape[1]),
                f"affine upstream shape {dy.shape} != ({x.shape[0]}, {w.shape[1]})")
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Subgradient convention: exactly-0 inputs get 0 gradient."""
    _check_dims(x.shape == dy.shape, "relu upstream shape mismatch")
    return dy * (x > 0.0)


def residual_forward(x: np.ndarray, fx: np.ndarray) -> np.ndarray:
    """y = fx + x; both operands must have identical shape (constant width)."""
    _check_dims(x.shape == fx.shape,
                f"residual add needs equal shapes, got {x.shape} vs {fx.shape}")
    return fx + x


def residual_backward(dy: np.ndarray):
    """The add fans the upstream gradient out to both branches unchanged."""
    return dy, dy


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; rows sum to 1, argmax preserved."""
    z = np.atleast_2d(z)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Jacobian-vector product through a row softmax whose output was y."""
    _check_dims(y.shape == dy.shape, "softmax upstream shape mismatch")
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(logits: np.ndarray, labels: np.ndarray):
    """Per-instance binary cross-entropy on logits, with gradient.

    loss = max(z, 0) - z*y + log(1 + exp(-|z|)), dloss/dz = sigmoid(z) - y.
    Stable for any finite logit. Returns (losses, dlogits), both shaped like
    the inputs.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_dims(z.shape == y.shape, "logits/labels shape mismatch")
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    dlogits = sigmoid(z) - y
    return losses, dlogits


def squared_loss(preds: np.ndarray, targets: np.ndarray):
    """Per-instance squared error (p - t)^2 with gradient 2(p - t)."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    _check_dims(p.shape == t.shape, "preds/targets shape mismatch")
    diff = p - t
    return diff * diff, 2.0 * diff


# ---------------------------------------------------------------------------
# parameters and optimizer


class ParamStore:
    """Ordered, named float64 parameter tensors with parallel gradient slots.

    Insertion order is the canonical order for serialization, flattening and
    the gradient checker, so two stores built by the same code path compare
    positionally.
    """

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.step: int = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"duplicate parameter name: {name!r}")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, p in self.params.items():
            other.add(name, p.copy())
        other.step = self.step
        return other

    def load_values(self, other: "ParamStore") -> None:
        """Copy parameter values in from a store with identical names/shapes."""
        if self.names() != other.names():
            raise KeyError("parameter name mismatch between stores")
        for name, p in self.params.items():
            if p.shape != other.params[name].shape:
                raise DimensionError(f"shape mismatch for {name!r}")
            p[...] = other.params[name]

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()]) \
            if self.params else np.zeros(0)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter tensor."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        st = cls(beta1=beta1, beta2=beta2, eps=eps)
        for name, p in store.params.items():
            st.m[name] = np.zeros_like(p)
            st.v[name] = np.zeros_like(p)
        return st


def adam_step(store: ParamStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from store.grads; zeroes grads after."""
    if set(state.m) != set(store.params):
        raise KeyError("Adam state does not match parameter store")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in store.params.items():
        g = store.grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    store.step += 1
    store.zero_grads()


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for g in store.grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_grads_(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(store)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in store.grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FiniteDiffReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    checked: int
    skipped: int

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return (f"max_rel_err={self.max_rel_err:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} "
                f"({self.checked} coords checked, {self.skipped} skipped at kinks)")


def finite_diff_check(loss_fn, store: ParamStore, *, h: float = 1e-5,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> FiniteDiffReport:
    """Central-difference check of analytic gradients in ``store.grads``.

    ``loss_fn()`` must be deterministic, return either ``loss`` or
    ``(loss, signature)``, and accumulate analytic gradients into
    ``store.grads`` as a side effect (the reference call below captures them;
    later evaluations' gradients are ignored). ``signature`` is any hashable
    fingerprint of the active relu patterns: coordinates whose signature
    differs between the +h and -h evaluations sit on a kink where central
    differences are meaningless, and are skipped rather than reported.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8) as the
    denominator. At most ``max_coords`` coordinates per parameter tensor are
    sampled (all of them when None).
    """

    def evaluate():
        out = loss_fn()
        if isinstance(out, tuple):
            loss, sig = out
        else:
            loss, sig = out, None
        return float(loss), sig

    rng = rng or np.random.default_rng(0)
    store.zero_grads()
    evaluate()
    analytic = {name: g.copy() for name, g in store.grads.items()}

    worst = 0.0
    worst_param = ""
    worst_index: tuple = ()
    checked = 0
    skipped = 0
    for name, p in store.params.items():
        flat = p.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            idxs = rng.choice(n, size=max_coords, replace=False)
        else:
            idxs = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp, sp = evaluate()
            flat[i] = orig - h
            lm, sm = evaluate()
            flat[i] = orig
            if sp is not None and sp != sm:
                skipped += 1
                continue
            numeric = (lp - lm) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if rel > worst:
                worst = rel
                worst_param = name
                worst_index = np.unravel_index(int(i), p.shape)
    store.zero_grads()
    return FiniteDiffReport(worst, worst_param, tuple(int(k) for k in worst_index),
                            checked, skipped)

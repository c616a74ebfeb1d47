"""Task-gated mixture of experts over aligned concept space, plus baselines.

Architecture: E shared experts (affine projection into a constant width, then
a stack of relu residual blocks), one gate network per task (two-layer MLP
producing E softmax logits), one head per task (two-layer MLP on the gated
expert combination, one output logit):

    v(x)      = sum_j softmax(gate_i(x))_j * expert_j(x)
    logit_i   = head_i(v(x))

All parameters live in a single ParamStore; forward/backward group a mixed
batch by task so a task-i instance touches only gate_i/head_i parameters
(structural gradient isolation) while experts see the whole batch.

Stacks are explicit op lists, which lets experts take other shapes than the
standard residual tower: the constructive embedding below turns K trained
per-task networks into a K-expert mixture with constant near-one-hot gates
and exact identity heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric
from .numeric import DimensionError, ParamStore

__all__ = [
    "Affine",
    "Relu",
    "ResBlock",
    "stack_forward",
    "stack_backward",
    "stack_signature",
    "MixtureConfig",
    "Mixture",
    "mixture_param_count",
    "mixture_forward_flops",
    "BaselineConfig",
    "FeedForwardNet",
    "MultiHeadNet",
    "build_baseline",
    "embed_learners",
    "embedding_param_overhead",
    "save_checkpoint",
    "load_checkpoint",
]


# ---------------------------------------------------------------------------
# layer stacks


@dataclass(frozen=True)
class Affine:
    w: str
    b: str


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class ResBlock:
    """y = relu(x @ w + b) + x; requires square w (constant width)."""

    w: str
    b: str


def stack_forward(store: ParamStore, ops: Sequence, x: np.ndarray):
    """Run a stack; returns (output, caches) with one cache entry per op."""
    caches = []
    for op in ops:
        if isinstance(op, Affine):
            caches.append((x,))
            x = numeric.affine_forward(x, store.params[op.w], store.params[op.b])
        elif isinstance(op, Relu):
            caches.append((x,))
            x = numeric.relu_forward(x)
        elif isinstance(op, ResBlock):
            z = numeric.affine_forward(x, store.params[op.w], store.params[op.b])
            caches.append((x, z))
            x = numeric.residual_forward(x, numeric.relu_forward(z))
        else:
            raise TypeError(f"unknown op {op!r}")
    return x, caches


def stack_backward(store: ParamStore, ops: Sequence, caches, dy: np.ndarray):
    """Backprop a stack, accumulating parameter grads; returns dx."""
    for op, cache in zip(reversed(ops), reversed(caches)):
        if isinstance(op, Affine):
            (x,) = cache
            dy, dw, db = numeric.affine_backward(x, store.params[op.w], dy)
            store.grads[op.w] += dw
            store.grads[op.b] += db
        elif isinstance(op, Relu):
            (x,) = cache
            dy = numeric.relu_backward(x, dy)
        elif isinstance(op, ResBlock):
            x, z = cache
            dres, dskip = numeric.residual_backward(dy)
            dz = numeric.relu_backward(z, dres)
            dx, dw, db = numeric.affine_backward(x, store.params[op.w], dz)
            store.grads[op.w] += dw
            store.grads[op.b] += db
            dy = dx + dskip
        else:
            raise TypeError(f"unknown op {op!r}")
    return dy


def stack_signature(ops: Sequence, caches) -> tuple:
    """Relu activation-sign fingerprint of a forward pass (kink detection)."""
    sig = []
    for op, cache in zip(ops, caches):
        if isinstance(op, Relu):
            sig.append((cache[0] > 0.0).tobytes())
        elif isinstance(op, ResBlock):
            sig.append((cache[1] > 0.0).tobytes())
    return tuple(sig)


def _init_affine(store: ParamStore, rng: np.random.Generator, name: str,
                 fan_in: int, fan_out: int, gain: float = 2.0) -> Affine:
    # gain 2 (He) where a relu consumes the output, 1 (Xavier) where the
    # output stays linear -- keeps logit variance O(1) through the residual
    # stack instead of doubling per layer.
    w = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
    store.add(f"{name}.w", w)
    store.add(f"{name}.b", np.zeros(fan_out))
    return Affine(f"{name}.w", f"{name}.b")


# ---------------------------------------------------------------------------
# the mixture


@dataclass(frozen=True)
class MixtureConfig:
    input_dim: int
    num_tasks: int
    num_experts: int = 3
    expert_depth: int = 6
    expert_width: int = 512
    gate_hidden: int = 32
    head_hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "num_tasks", "num_experts", "expert_depth",
                     "expert_width", "gate_hidden", "head_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def mixture_param_count(cfg: MixtureConfig) -> int:
    """Closed-form parameter count of the standard mixture; asserted at init."""
    c, w = cfg.input_dim, cfg.expert_width
    expert = (c * w + w) + cfg.expert_depth * (w * w + w)
    gate = (c * cfg.gate_hidden + cfg.gate_hidden) \
        + (cfg.gate_hidden * cfg.num_experts + cfg.num_experts)
    head = (w * cfg.head_hidden + cfg.head_hidden) + (cfg.head_hidden + 1)
    return cfg.num_experts * expert + cfg.num_tasks * (gate + head)


def _affine_flops(n_in: int, n_out: int) -> int:
    # one multiply-add pair per weight, one add per bias
    return 2 * n_in * n_out + n_out


def mixture_forward_flops(cfg: MixtureConfig) -> int:
    """Flops for one instance through all experts plus ONE task's gate/head.

    Conventions: affine(i, o) = 2*i*o + o; relu and residual add cost 1 per
    element; softmax over E costs 4E (shift, exp, sum, divide); the gated
    combination of E width-w experts costs (2E - 1) * w.
    """
    c, w, e = cfg.input_dim, cfg.expert_width, cfg.num_experts
    expert = _affine_flops(c, w) + cfg.expert_depth * (_affine_flops(w, w) + 2 * w)
    gate = _affine_flops(c, cfg.gate_hidden) + cfg.gate_hidden \
        + _affine_flops(cfg.gate_hidden, e) + 4 * e
    combine = (2 * e - 1) * w
    head = _affine_flops(w, cfg.head_hidden) + cfg.head_hidden \
        + _affine_flops(cfg.head_hidden, 1)
    return e * expert + gate + combine + head


class Mixture:
    """E experts shared across K tasks, with per-task gates and heads."""

    def __init__(self, store: ParamStore, experts: list, gates: list,
                 heads: list, input_dim: int, expert_width: int,
                 task_ids: list[str], loss_kinds: list[str],
                 vocab_fingerprint: str | None = None,
                 config: MixtureConfig | None = None):
        if len(gates) != len(heads) or len(gates) != len(task_ids):
            raise DimensionError("one gate and one head per task required")
        self.store = store
        self.experts = experts
        self.gates = gates
        self.heads = heads
        self.input_dim = input_dim
        self.expert_width = expert_width
        self.task_ids = list(task_ids)
        self.loss_kinds = list(loss_kinds)
        self.vocab_fingerprint = vocab_fingerprint
        self.config = config

    @property
    def num_tasks(self) -> int:
        return len(self.gates)

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    @classmethod
    def standard(cls, cfg: MixtureConfig, task_ids: Sequence[str] | None = None,
                 loss_kinds: Sequence[str] | None = None,
                 vocab_fingerprint: str | None = None) -> "Mixture":
        """Freshly initialized mixture; creation order (experts, gates,
        heads) and the seeded generator make identical configs bitwise
        identical."""
        rng = np.random.default_rng(cfg.seed)
        store = ParamStore()
        experts = []
        for j in range(cfg.num_experts):
            ops = [_init_affine(store, rng, f"expert{j}.l0",
                                cfg.input_dim, cfg.expert_width, gain=1.0)]
            for l in range(1, cfg.expert_depth + 1):
                aff = _init_affine(store, rng, f"expert{j}.l{l}",
                                   cfg.expert_width, cfg.expert_width)
                ops.append(ResBlock(aff.w, aff.b))
            experts.append(ops)
        gates = []
        for i in range(cfg.num_tasks):
            gates.append([
                _init_affine(store, rng, f"gate{i}.l0", cfg.input_dim,
                             cfg.gate_hidden),
                Relu(),
                _init_affine(store, rng, f"gate{i}.l1", cfg.gate_hidden,
                             cfg.num_experts, gain=1.0),
            ])
        heads = []
        for i in range(cfg.num_tasks):
            heads.append([
                _init_affine(store, rng, f"head{i}.l0", cfg.expert_width,
                             cfg.head_hidden),
                Relu(),
                _init_affine(store, rng, f"head{i}.l1", cfg.head_hidden, 1,
                             gain=1.0),
            ])
        assert store.num_params() == mixture_param_count(cfg)
        ids = list(task_ids) if task_ids is not None \
            else [f"task{i}" for i in range(cfg.num_tasks)]
        kinds = list(loss_kinds) if loss_kinds is not None \
            else ["binary"] * cfg.num_tasks
        return cls(store, experts, gates, heads, cfg.input_dim,
                   cfg.expert_width, ids, kinds, vocab_fingerprint, cfg)

    # -- forward / backward over mixed-task batches

    def forward_batch(self, X: np.ndarray, task_ids: np.ndarray):
        """Logits for a mixed batch. X is (B, input_dim) already masked;
        task_ids picks the gate/head per row. Returns (logits, cache)."""
        X = np.asarray(X, dtype=np.float64)
        task_ids = np.asarray(task_ids, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(
                f"batch shape {X.shape} incompatible with input_dim {self.input_dim}")
        if task_ids.shape != (X.shape[0],):
            raise DimensionError("one task id per batch row required")
        if task_ids.size and (task_ids.min() < 0 or task_ids.max() >= self.num_tasks):
            raise DimensionError("task id out of range")
        B = X.shape[0]
        U = np.zeros((self.num_experts, B, self.expert_width))
        expert_caches = []
        for j, ops in enumerate(self.experts):
            out, cache = stack_forward(self.store, ops, X)
            U[j] = out
            expert_caches.append(cache)
        logits = np.zeros(B)
        groups = []
        for t in np.unique(task_ids):
            rows = np.flatnonzero(task_ids == t)
            a, gate_cache = stack_forward(self.store, self.gates[t], X[rows])
            G = numeric.softmax_rows(a)
            V = np.einsum("ebw,be->bw", U[:, rows, :], G)
            h, head_cache = stack_forward(self.store, self.heads[t], V)
            logits[rows] = h[:, 0]
            groups.append((int(t), rows, G, V, gate_cache, head_cache))
        return logits, (X, task_ids, U, expert_caches, groups)

    def backward_batch(self, cache, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients for dL/dlogits."""
        X, task_ids, U, expert_caches, groups = cache
        dU = np.zeros_like(U)
        for t, rows, G, V, gate_cache, head_cache in groups:
            dh = dlogits[rows][:, None]
            dV = stack_backward(self.store, self.heads[t], head_cache, dh)
            dG = np.einsum("ebw,bw->be", U[:, rows, :], dV)
            dU[:, rows, :] += G.T[:, :, None] * dV[None, :, :]
            da = numeric.softmax_rows_backward(G, dG)
            stack_backward(self.store, self.gates[t], gate_cache, da)
        for j, ops in enumerate(self.experts):
            stack_backward(self.store, ops, expert_caches[j], dU[j])

    def signature(self, cache) -> tuple:
        """Activation-sign fingerprint across every stack in the pass."""
        _, _, _, expert_caches, groups = cache
        sig = []
        for j, ops in enumerate(self.experts):
            sig.extend(stack_signature(ops, expert_caches[j]))
        for t, rows, G, V, gate_cache, head_cache in groups:
            sig.extend(stack_signature(self.gates[t], gate_cache))
            sig.extend(stack_signature(self.heads[t], head_cache))
        return tuple(sig)

    def predict_logits(self, X: np.ndarray, task: int,
                       chunk: int = 4096) -> np.ndarray:
        """Forward a single-task matrix in chunks, discarding caches."""
        outs = []
        for s in range(0, X.shape[0], chunk):
            block = X[s:s + chunk]
            ids = np.full(block.shape[0], task, dtype=np.int64)
            logits, _ = self.forward_batch(block, ids)
            outs.append(logits)
        return np.concatenate(outs) if outs else np.zeros(0)

    def copy(self) -> "Mixture":
        return Mixture(self.store.copy(), self.experts, self.gates, self.heads,
                       self.input_dim, self.expert_width, self.task_ids,
                       self.loss_kinds, self.vocab_fingerprint, self.config)


# ---------------------------------------------------------------------------
# baselines


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = "single_task_mlp"          # or "shared_trunk_multitask"
    hidden: tuple = (64,)                  # () gives logistic regression
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("single_task_mlp", "shared_trunk_multitask"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")


class FeedForwardNet:
    """Plain relu MLP with a single output logit."""

    def __init__(self, store: ParamStore, ops: list, input_dim: int):
        self.store = store
        self.ops = ops
        self.input_dim = input_dim

    @classmethod
    def mlp(cls, input_dim: int, hidden: Sequence[int],
            seed: int = 0) -> "FeedForwardNet":
        rng = np.random.default_rng(seed)
        store = ParamStore()
        ops: list = []
        prev = input_dim
        for l, width in enumerate(hidden):
            ops.append(_init_affine(store, rng, f"layer{l}", prev, width))
            ops.append(Relu())
            prev = width
        ops.append(_init_affine(store, rng, f"layer{len(hidden)}", prev, 1,
                                gain=1.0))
        return cls(store, ops, input_dim)

    def forward_batch(self, X: np.ndarray, task_ids=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimensionError(f"batch shape {X.shape} vs input_dim {self.input_dim}")
        out, caches = stack_forward(self.store, self.ops, X)
        return out[:, 0], caches

    def backward_batch(self, caches, dlogits: np.ndarray) -> None:
        stack_backward(self.store, self.ops, caches, dlogits[:, None])

    def signature(self, caches) -> tuple:
        return stack_signature(self.ops, caches)

    def predict_logits(self, X: np.ndarray, task: int = 0,
                       chunk: int = 8192) -> np.ndarray:
        outs = []
        for s in range(0, X.shape[0], chunk):
            logits, _ = self.forward_batch(X[s:s + chunk])
            outs.append(logits)
        return np.concatenate(outs) if outs else np.zeros(0)

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(self.store.copy(), self.ops, self.input_dim)


class MultiHeadNet:
    """Shared relu trunk with one linear output head per task."""

    def __init__(self, store: ParamStore, trunk: list, heads: list[Affine],
                 input_dim: int):
        self.store = store
        self.trunk = trunk
        self.heads = heads
        self.input_dim = input_dim

    @classmethod
    def build(cls, input_dim: int, hidden: Sequence[int], num_tasks: int,
              seed: int = 0) -> "MultiHeadNet":
        if num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        rng = np.random.default_rng(seed)
        store = ParamStore()
        trunk: list = []
        prev = input_dim
        for l, width in enumerate(hidden):
            trunk.append(_init_affine(store, rng, f"trunk{l}", prev, width))
            trunk.append(Relu())
            prev = width
        heads = [_init_affine(store, rng, f"head{i}", prev, 1, gain=1.0)
                 for i in range(num_tasks)]
        return cls(store, trunk, heads, input_dim)

    def forward_batch(self, X: np.ndarray, task_ids: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        task_ids = np.asarray(task_ids, dtype=np.int64)
        h, trunk_cache = stack_forward(self.store, self.trunk, X)
        logits = np.zeros(X.shape[0])
        groups = []
        for t in np.unique(task_ids):
            rows = np.flatnonzero(task_ids == t)
            out, cache = stack_forward(self.store, [self.heads[t]], h[rows])
            logits[rows] = out[:, 0]
            groups.append((int(t), rows, cache))
        return logits, (h, trunk_cache, groups)

    def backward_batch(self, cache, dlogits: np.ndarray) -> None:
        h, trunk_cache, groups = cache
        dh = np.zeros_like(h)
        for t, rows, head_cache in groups:
            dh[rows] += stack_backward(self.store, [self.heads[t]], head_cache,
                                       dlogits[rows][:, None])
        stack_backward(self.store, self.trunk, trunk_cache, dh)

    def signature(self, cache) -> tuple:
        return stack_signature(self.trunk, cache[1])

    def predict_logits(self, X: np.ndarray, task: int,
                       chunk: int = 8192) -> np.ndarray:
        outs = []
        for s in range(0, X.shape[0], chunk):
            block = X[s:s + chunk]
            ids = np.full(block.shape[0], task, dtype=np.int64)
            logits, _ = self.forward_batch(block, ids)
            outs.append(logits)
        return np.concatenate(outs) if outs else np.zeros(0)

    def copy(self) -> "MultiHeadNet":
        return MultiHeadNet(self.store.copy(), self.trunk, self.heads,
                            self.input_dim)


def build_baseline(cfg: BaselineConfig, input_dim: int, num_tasks: int = 1):
    if cfg.kind == "single_task_mlp":
        return FeedForwardNet.mlp(input_dim, cfg.hidden, cfg.seed)
    return MultiHeadNet.build(input_dim, cfg.hidden, num_tasks, cfg.seed)


# ---------------------------------------------------------------------------
# constructive embedding of per-task learners


def embedding_param_overhead(input_dim: int, num_tasks: int) -> int:
    """Parameters added on top of the learners: per task, one constant gate
    (input_dim*1 + 1 hidden, 1*K + K output) and one exact identity head
    (1*2 + 2 then 2*1 + 1 = 7)."""
    k = num_tasks
    gate = (input_dim + 1) + (k + k)
    return k * (gate + 7)


def embed_learners(learners: Sequence[FeedForwardNet],
                   schemas: Sequence, margin: float = 50.0,
                   vocab_fingerprint: str | None = None) -> Mixture:
    """Build a K-task mixture that reproduces K trained per-task networks.

    Expert j is learner j's stack verbatim, with first-layer weight rows on
    the task's masked coordinates zeroed (the learners never see those
    coordinates, so this is output-preserving on masked inputs and makes the
    insensitivity structural). Gate i ignores its input (zero weights) and
    emits constant logits with ``margin`` on expert i, so softmax puts
    1 - (K-1)e^-margin mass on the matching expert. Head i is an exact
    identity on the scalar expert output via a paired relu: relu(v) - relu(-v).

    With K = 1 the softmax weight is exactly 1 and outputs are bitwise equal
    to the learner's. Mismatched learner input widths or non-scalar outputs
    raise DimensionError.
    """
    if not learners:
        raise DimensionError("at least one learner required")
    if len(learners) != len(schemas):
        raise DimensionError("one schema per learner required")
    k = len(learners)
    input_dim = learners[0].input_dim
    store = ParamStore()
    experts = []
    for j, learner in enumerate(learners):
        if learner.input_dim != input_dim:
            raise DimensionError(
                f"learner {j} input width {learner.input_dim} != {input_dim}")
        last = learner.ops[-1]
        if not isinstance(last, Affine) or learner.store.params[last.w].shape[1] != 1:
            raise DimensionError(f"learner {j} does not end in a scalar affine")
        ops = []
        first_affine = True
        for op in learner.ops:
            if isinstance(op, Relu):
                ops.append(Relu())
                continue
            w = learner.store.params[op.w].copy()
            b = learner.store.params[op.b].copy()
            if first_affine:
                # structurally blind the expert to its task's masked coords
                w[schemas[j].mask_indices(), :] = 0.0
                first_affine = False
            store.add(f"expert{j}.{op.w}", w)
            store.add(f"expert{j}.{op.b}", b)
            new = Affine(f"expert{j}.{op.w}", f"expert{j}.{op.b}")
            ops.append(ResBlock(new.w, new.b) if isinstance(op, ResBlock) else new)
        experts.append(ops)
    gates = []
    for i in range(k):
        store.add(f"gate{i}.l0.w", np.zeros((input_dim, 1)))
        store.add(f"gate{i}.l0.b", np.zeros(1))
        store.add(f"gate{i}.l1.w", np.zeros((1, k)))
        bias = np.zeros(k)
        bias[i] = margin
        store.add(f"gate{i}.l1.b", bias)
        gates.append([Affine(f"gate{i}.l0.w", f"gate{i}.l0.b"), Relu(),
                      Affine(f"gate{i}.l1.w", f"gate{i}.l1.b")])
    heads = []
    for i in range(k):
        store.add(f"head{i}.l0.w", np.array([[1.0, -1.0]]))
        store.add(f"head{i}.l0.b", np.zeros(2))
        store.add(f"head{i}.l1.w", np.array([[1.0], [-1.0]]))
        store.add(f"head{i}.l1.b", np.zeros(1))
        heads.append([Affine(f"head{i}.l0.w", f"head{i}.l0.b"), Relu(),
                      Affine(f"head{i}.l1.w", f"head{i}.l1.b")])
    task_ids = [getattr(s, "task_id", f"task{i}") for i, s in enumerate(schemas)]
    kinds = [getattr(s, "loss_kind", "binary") for s in schemas]
    return Mixture(store, experts, gates, heads, input_dim, expert_width=1,
                   task_ids=task_ids, loss_kinds=kinds,
                   vocab_fingerprint=vocab_fingerprint, config=None)


# ---------------------------------------------------------------------------
# checkpoints


_MAGIC = b"TSKMX001"


def _ops_to_json(ops: Sequence) -> list:
    out = []
    for op in ops:
        if isinstance(op, Affine):
            out.append({"op": "affine", "w": op.w, "b": op.b})
        elif isinstance(op, ResBlock):
            out.append({"op": "resblock", "w": op.w, "b": op.b})
        elif isinstance(op, Relu):
            out.append({"op": "relu"})
        else:
            raise TypeError(f"unknown op {op!r}")
    return out


def _ops_from_json(items: list) -> list:
    out = []
    for it in items:
        if it["op"] == "affine":
            out.append(Affine(it["w"], it["b"]))
        elif it["op"] == "resblock":
            out.append(ResBlock(it["w"], it["b"]))
        elif it["op"] == "relu":
            out.append(Relu())
        else:
            raise ValueError(f"bad checkpoint op {it!r}")
    return out


def save_checkpoint(path, model, extra: dict | None = None) -> bytes:
    """Serialize a model to a self-describing binary checkpoint.

    Layout: 8-byte magic, 8-byte big-endian header length, JSON header
    (format version, model kind, stack topology, parameter names/shapes,
    vocabulary fingerprint, caller extras), then raw little-endian float64
    parameter buffers in store order. Byte-deterministic for fixed params.
    """
    store = model.store
    header: dict = {
        "format": 1,
        "params": [{"name": n, "shape": list(p.shape)}
                   for n, p in store.params.items()],
        "extra": extra or {},
    }
    if isinstance(model, Mixture):
        header["kind"] = "mixture"
        header["input_dim"] = model.input_dim
        header["expert_width"] = model.expert_width
        header["task_ids"] = model.task_ids
        header["loss_kinds"] = model.loss_kinds
        header["vocab_fingerprint"] = model.vocab_fingerprint
        header["experts"] = [_ops_to_json(e) for e in model.experts]
        header["gates"] = [_ops_to_json(g) for g in model.gates]
        header["heads"] = [_ops_to_json(h) for h in model.heads]
        if model.config is not None:
            header["config"] = {f: getattr(model.config, f) for f in
                                ("input_dim", "num_tasks", "num_experts",
                                 "expert_depth", "expert_width", "gate_hidden",
                                 "head_hidden", "seed")}
    elif isinstance(model, FeedForwardNet):
        header["kind"] = "feedforward"
        header["input_dim"] = model.input_dim
        header["ops"] = _ops_to_json(model.ops)
    elif isinstance(model, MultiHeadNet):
        header["kind"] = "multihead"
        header["input_dim"] = model.input_dim
        header["trunk"] = _ops_to_json(model.trunk)
        header["heads"] = [_ops_to_json([h])[0] for h in model.heads]
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    head_bytes = json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode()
    blob = bytearray()
    blob += _MAGIC
    blob += len(head_bytes).to_bytes(8, "big")
    blob += head_bytes
    for p in store.params.values():
        blob += np.ascontiguousarray(p, dtype="<f8").tobytes()
    data = bytes(blob)
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_checkpoint(path_or_bytes):
    """Inverse of save_checkpoint; returns (model, extra)."""
    data = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) \
        else Path(path_or_bytes).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    hlen = int.from_bytes(data[8:16], "big")
    header = json.loads(data[16:16 + hlen].decode())
    if header.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
    store = ParamStore()
    offset = 16 + hlen
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        size = int(np.prod(shape)) if shape else 1
        raw = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        store.add(meta["name"], raw.reshape(shape).astype(np.float64))
        offset += size * 8
    kind = header["kind"]
    if kind == "mixture":
        cfg = None
        if "config" in header:
            cfg = MixtureConfig(**header["config"])
        model = Mixture(store,
                        [_ops_from_json(e) for e in header["experts"]],
                        [_ops_from_json(g) for g in header["gates"]],
                        [_ops_from_json(h) for h in header["heads"]],
                        header["input_dim"], header["expert_width"],
                        header["task_ids"], header["loss_kinds"],
                        header.get("vocab_fingerprint"), cfg)
    elif kind == "feedforward":
        model = FeedForwardNet(store, _ops_from_json(header["ops"]),
                               header["input_dim"])
    elif kind == "multihead":
        heads = [_ops_from_json([h])[0] for h in header["heads"]]
        model = MultiHeadNet(store, _ops_from_json(header["trunk"]), heads,
                             header["input_dim"])
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    return model, header.get("extra", {})

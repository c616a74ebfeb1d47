"""Training loops: joint meta-training with in-batch task mixing, plain
supervised baselines, and low-learning-rate online adaptation of one task.

The meta objective is the SUM over tasks and training instances of the
per-task loss at that task's head. One mixed batch is drawn per step (task
chosen proportionally to train split size, instance uniform within the task),
per-instance losses are summed, and a single first-order backward pass feeds
one Adam step. No per-task averaging anywhere: a task's gradient mass is
proportional to its share of the batch. Adam's normalization makes the sum
convention robust to batch size.

Baselines run through the same engine (same sampler, loss, optimizer) with a
single task, so a one-task meta run and a baseline run of the same
architecture produce identical traces under identical seeds.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric
from .concepts import SchemaError
from .data import BatchSampler, MetaDataset, TaskDataset, build_auxiliary_tasks, \
    build_meta_dataset
from .model import BaselineConfig, Mixture, MixtureConfig, build_baseline
from .numeric import AdamState, adam_step, clip_grads_

__all__ = [
    "MetaTrainConfig",
    "AdaptConfig",
    "RunRow",
    "TrainResult",
    "AdaptResult",
    "SingleTaskResult",
    "meta_loss",
    "meta_train",
    "train_baseline",
    "online_adapt",
    "single_task_meta",
    "write_runlog",
    "ADAPT_LR_GRID",
]

log = logging.getLogger(__name__)

# three log-spaced points spanning the adaptation learning-rate range
ADAPT_LR_GRID = (1e-6, 3.1622776601683795e-06, 1e-5)


@dataclass(frozen=True)
class MetaTrainConfig:
    epochs: int = 1
    batch_size: int = 256
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int = 0       # early-stop rounds without val improvement; 0 = off
    clip_norm: float = 0.0  # global gradient-norm ceiling; 0 = off


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 30
    batch_size: int = 256
    lrs: tuple = ADAPT_LR_GRID
    seed: int = 0


@dataclass
class RunRow:
    """One evaluation line of the run log.

    ``train_meta_loss`` is the epoch's mean per-instance training loss scaled
    by the total number of training instances (an unbiased estimate of the
    full meta objective under the proportional sampler); ``val_meta_loss`` is
    the exact objective summed over validation splits. ``wall_time`` is
    seconds since training started.
    """

    step: int
    epoch: int
    train_meta_loss: float
    val_meta_loss: float
    wall_time: float


@dataclass
class TrainResult:
    model: object
    rows: list
    best_val: float
    stopped_early: bool


@dataclass
class AdaptResult:
    model: Mixture
    lr: float                 # 0.0 when the initial snapshot won
    best_val: float
    rows: list
    lr_curves: dict           # lr -> list of per-epoch val losses


@dataclass
class SingleTaskResult:
    meta_model: Mixture
    adapted_model: Mixture
    meta: MetaDataset
    train_rows: list
    adapt_rows: list
    info: dict


def _per_instance_loss(logits: np.ndarray, y: np.ndarray,
                       regression: np.ndarray):
    """Vectorized per-instance losses/gradients for a mixed-kind batch.

    ``regression`` is a boolean row mask; False rows use logistic loss on the
    logit, True rows squared error.
    """
    losses = np.empty_like(logits)
    dlogits = np.empty_like(logits)
    b = ~regression
    if b.any():
        losses[b], dlogits[b] = numeric.logistic_loss(logits[b], y[b])
    if regression.any():
        r = regression
        losses[r], dlogits[r] = numeric.squared_loss(logits[r], y[r])
    return losses, dlogits


class _TaskVocabView:
    """Single-task adapter with the MetaDataset batch protocol, feeding the
    task's own-vocabulary dense view with leakage columns zeroed."""

    def __init__(self, task: TaskDataset):
        self.task = task
        self._dense = {}

    @property
    def num_tasks(self) -> int:
        return 1

    def sizes(self, split: str) -> np.ndarray:
        return np.array([self.task.n(split)], dtype=np.int64)

    def loss_kinds(self):
        return [self.task.schema.loss_kind]

    def labels(self, task: int, split: str) -> np.ndarray:
        return self.task.labels(split)

    def _cache(self, split: str) -> np.ndarray:
        if split not in self._dense:
            self._dense[split] = self.task.dense(split, masked=True)
        return self._dense[split]

    def dense_rows(self, task: int, rows, split: str) -> np.ndarray:
        X = self._cache(split)
        return X if rows is None else X[rows]

    def dense_batch(self, task_ids, row_ids, split: str = "train"):
        X = self._cache(split)[row_ids]
        return X, self.task.labels(split)[row_ids]


def meta_loss(model, data, split: str, head_map: Sequence[int] | None = None,
              chunk: int = 4096) -> float:
    """Exact meta objective: sum of per-instance losses over every task's
    given split. ``head_map[t]`` names the model head serving dataset task t
    (identity when None)."""
    kinds = data.loss_kinds()
    total = 0.0
    for t in range(data.num_tasks):
        head = t if head_map is None else head_map[t]
        n = int(data.sizes(split)[t])
        labels = data.labels(t, split)
        reg = kinds[t] == "regression"
        for s in range(0, n, chunk):
            rows = np.arange(s, min(s + chunk, n))
            X = data.dense_rows(t, rows, split)
            ids = np.full(rows.size, head, dtype=np.int64)
            logits, _ = model.forward_batch(X, ids)
            losses, _ = _per_instance_loss(
                logits, labels[rows], np.full(rows.size, reg, dtype=bool))
            total += float(losses.sum())
    return total


def _fit(model, data, cfg: MetaTrainConfig,
         head_map: Sequence[int] | None = None) -> TrainResult:
    """Shared engine behind meta_train/train_baseline/online_adapt."""
    sizes = data.sizes("train")
    total_train = int(sizes.sum())
    if total_train == 0:
        raise ValueError("no training instances")
    sampler = BatchSampler(sizes, cfg.batch_size, cfg.seed)
    adam = AdamState.for_store(model.store, cfg.beta1, cfg.beta2, cfg.eps)
    kinds = np.array([k == "regression" for k in data.loss_kinds()])
    heads = np.arange(data.num_tasks, dtype=np.int64) if head_map is None \
        else np.asarray(head_map, dtype=np.int64)
    has_val = int(data.sizes("val").sum()) > 0
    steps_per_epoch = math.ceil(total_train / cfg.batch_size)

    rows: list[RunRow] = []
    best_val = math.inf
    best_params = None
    bad_rounds = 0
    stopped = False
    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        seen = 0
        for _ in range(steps_per_epoch):
            tasks, rws = sampler.draw()
            X, y = data.dense_batch(tasks, rws, "train")
            logits, cache = model.forward_batch(X, heads[tasks])
            losses, dlogits = _per_instance_loss(logits, y, kinds[tasks])
            if not np.all(np.isfinite(losses)):
                bad = int(np.flatnonzero(~np.isfinite(losses))[0])
                raise RuntimeError(
                    f"non-finite training loss at step {step + 1} "
                    f"(epoch {epoch}), task index {int(tasks[bad])}, "
                    f"row {int(rws[bad])}: loss={losses[bad]!r}")
            model.backward_batch(cache, dlogits)
            if cfg.clip_norm > 0:
                clip_grads_(model.store, cfg.clip_norm)
            adam_step(model.store, adam, cfg.lr)
            step += 1
            loss_sum += float(losses.sum())
            seen += losses.size
        train_estimate = loss_sum / seen * total_train
        val = meta_loss(model, data, "val", head_map) if has_val else math.nan
        rows.append(RunRow(step, epoch, train_estimate, val,
                           time.perf_counter() - t0))
        if has_val:
            if val < best_val:
                best_val = val
                bad_rounds = 0
                if cfg.patience > 0:
                    best_params = model.store.copy()
            else:
                bad_rounds += 1
                if cfg.patience > 0 and bad_rounds >= cfg.patience:
                    stopped = True
                    break
    if stopped and best_params is not None:
        model.store.load_values(best_params)
    return TrainResult(model, rows, best_val, stopped)


def meta_train(meta: MetaDataset, model_or_config, cfg: MetaTrainConfig) -> TrainResult:
    """Jointly train a mixture on an aligned meta-dataset.

    ``model_or_config`` is either a Mixture (tasks must line up with the
    dataset) or a MixtureConfig whose input_dim/num_tasks are overridden to
    match the data.
    """
    if isinstance(model_or_config, MixtureConfig):
        mcfg = replace(model_or_config, input_dim=meta.num_concepts,
                       num_tasks=meta.num_tasks)
        model = Mixture.standard(
            mcfg, task_ids=[t.schema.task_id for t in meta.tasks],
            loss_kinds=meta.loss_kinds(),
            vocab_fingerprint=meta.meta_vocab.fingerprint())
    else:
        model = model_or_config
        if model.num_tasks != meta.num_tasks:
            raise SchemaError(
                f"model has {model.num_tasks} heads, dataset has "
                f"{meta.num_tasks} tasks")
        if model.input_dim != meta.num_concepts:
            raise SchemaError(
                f"model input width {model.input_dim} != meta-vocabulary "
                f"size {meta.num_concepts}")
        if model.vocab_fingerprint is None:
            model.vocab_fingerprint = meta.meta_vocab.fingerprint()
        elif model.vocab_fingerprint != meta.meta_vocab.fingerprint():
            raise SchemaError("model/dataset vocabulary fingerprints differ")
    return _fit(model, meta, cfg)


def train_baseline(task: TaskDataset, arch, cfg: MetaTrainConfig) -> TrainResult:
    """Supervised training of one task.

    With a BaselineConfig, the model consumes the task's own-vocabulary dense
    view, leakage (causal-mask) columns zeroed so baselines and mixtures
    compete on the same information. With a MixtureConfig, the task is lifted
    into its meta space and trained as a one-task mixture (the reduction used
    by the equivalence tests).
    """
    if isinstance(arch, MixtureConfig):
        return meta_train(build_meta_dataset([task]), arch, cfg)
    view = _TaskVocabView(task)
    model = build_baseline(arch, input_dim=len(task.schema.task_vocab))
    return _fit(model, view, cfg)


class _MetaTaskView:
    """One task of a MetaDataset exposed through the batch protocol."""

    def __init__(self, meta: MetaDataset, task: int):
        self.meta = meta
        self.t = task

    @property
    def num_tasks(self) -> int:
        return 1

    def sizes(self, split):
        return self.meta.sizes(split)[self.t:self.t + 1]

    def loss_kinds(self):
        return [self.meta.loss_kinds()[self.t]]

    def labels(self, task, split):
        return self.meta.labels(self.t, split)

    def dense_rows(self, task, rows, split):
        return self.meta.dense_rows(self.t, rows, split)

    def dense_batch(self, task_ids, row_ids, split="train"):
        X = self.meta.dense_rows(self.t, row_ids, split)
        return X, self.meta.labels(self.t, split)[row_ids]


def online_adapt(model: Mixture, task: TaskDataset,
                 cfg: AdaptConfig) -> AdaptResult:
    """Fine-tune ALL mixture parameters on one task at small learning rates.

    Every learning rate in ``cfg.lrs`` trains a copy for ``cfg.epochs``
    epochs from the given model; the validation objective is evaluated after
    each epoch and the best snapshot across all rates AND the untouched
    initial model is returned, so adaptation can only help.
    """
    fp = task.schema.meta_vocab.fingerprint()
    if model.vocab_fingerprint is not None and model.vocab_fingerprint != fp:
        raise SchemaError(
            "checkpoint was trained against a different meta-vocabulary")
    if task.schema.task_id not in model.task_ids:
        raise SchemaError(f"model has no head for task {task.schema.task_id!r}")
    head = model.task_ids.index(task.schema.task_id)
    meta = build_meta_dataset([task])
    view = _MetaTaskView(meta, 0)

    base_val = meta_loss(model, view, "val", head_map=[head])
    best_val = base_val
    best_store = model.store.copy()
    best_lr = 0.0
    best_rows: list[RunRow] = []
    curves: dict[float, list[float]] = {}
    for lr in cfg.lrs:
        candidate = model.copy()
        sizes = view.sizes("train")
        sampler = BatchSampler(sizes, cfg.batch_size, cfg.seed)
        adam = AdamState.for_store(candidate.store)
        reg = np.array([view.loss_kinds()[0] == "regression"])
        steps_per_epoch = math.ceil(int(sizes.sum()) / cfg.batch_size)
        rows: list[RunRow] = []
        curve = []
        step = 0
        t0 = time.perf_counter()
        for epoch in range(1, cfg.epochs + 1):
            loss_sum = 0.0
            seen = 0
            for _ in range(steps_per_epoch):
                _, rws = sampler.draw()
                X, y = view.dense_batch(None, rws)
                ids = np.full(rws.size, head, dtype=np.int64)
                logits, cache = candidate.forward_batch(X, ids)
                losses, dlogits = _per_instance_loss(logits, y,
                                                     np.repeat(reg, rws.size))
                if not np.all(np.isfinite(losses)):
                    raise RuntimeError(
                        f"non-finite adaptation loss at lr={lr}, epoch {epoch}")
                candidate.backward_batch(cache, dlogits)
                adam_step(candidate.store, adam, lr)
                step += 1
                loss_sum += float(losses.sum())
                seen += losses.size
            val = meta_loss(candidate, view, "val", head_map=[head])
            curve.append(val)
            rows.append(RunRow(step, epoch, loss_sum / seen * int(sizes.sum()),
                               val, time.perf_counter() - t0))
            if val < best_val:
                best_val = val
                best_store = candidate.store.copy()
                best_lr = lr
                best_rows = list(rows)
        curves[lr] = curve
    out = model.copy()
    out.store.load_values(best_store)
    return AdaptResult(out, best_lr, best_val, best_rows, curves)


def single_task_meta(base: TaskDataset, model_cfg: MixtureConfig,
                     meta_cfg: MetaTrainConfig, adapt_cfg: AdaptConfig, *,
                     aux_policy: str = "all", sample_k: int = 0,
                     aux_seed: int = 0,
                     min_support: int = 1) -> SingleTaskResult:
    """Full single-task pipeline: auxiliary tasks from the features, joint
    meta-training with the supervised task at head 0, then online adaptation
    of the supervised task."""
    aux = build_auxiliary_tasks(base, aux_policy, sample_k=sample_k,
                                seed=aux_seed, min_support=min_support)
    meta = build_meta_dataset([base] + aux)
    trained = meta_train(meta, model_cfg, meta_cfg)
    adapted = online_adapt(trained.model, base, adapt_cfg)
    info = {
        "num_aux": len(aux),
        "aux_policy": aux_policy if aux_policy != "sample"
        else f"sample:{sample_k}",
        "meta_epochs": meta_cfg.epochs,
        "meta_lr": meta_cfg.lr,
        "adapt_epochs": adapt_cfg.epochs,
        "adapt_lr": adapted.lr,
        "seed": meta_cfg.seed,
    }
    return SingleTaskResult(trained.model, adapted.model, meta,
                            trained.rows, adapted.rows, info)


def write_runlog(path, rows: Sequence[RunRow]) -> str:
    """CSV run log: one line per evaluation."""
    lines = ["step,epoch,train_meta_loss,val_meta_loss,wall_time"]
    for r in rows:
        lines.append(f"{r.step},{r.epoch},{r.train_meta_loss!r},"
                     f"{r.val_meta_loss!r},{r.wall_time:.3f}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text

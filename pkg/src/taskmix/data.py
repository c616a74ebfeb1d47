"""Dataset ingestion and meta-dataset assembly.

Pipeline: parse LIBSVM text into sparse instances, split train/validation,
name concepts, align vocabularies, compute per-task causal masks, and build a
MetaDataset whose instances live in shared meta space. Auxiliary tasks for the
single-task construction are also built here: one task per (non-constant)
feature, predicting that feature's value from the rest of the record.

Storage convention: each task split is a CSR-like SparseRows block. Footprints
over the meta-vocabulary are stored RAW (including the task's own label
value at its label coordinate); the task's causal mask is applied whenever an
instance is materialized for training or evaluation, never at rest, so the
original per-task data remains exactly recoverable.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .concepts import (ConceptVector, SchemaError, TaskSchema, Vocabulary,
                       align_vocabularies, compute_causal_mask,
                       constant_columns_by_activation, vocab_projection,
                       LABEL_PREFIX)

__all__ = [
    "ParseError",
    "parse_libsvm",
    "serialize_libsvm",
    "split_train_val",
    "SparseRows",
    "TaskDataset",
    "ingest_task",
    "MetaDataset",
    "build_meta_dataset",
    "align_tasks",
    "build_auxiliary_tasks",
    "single_task_alignment",
    "BatchSampler",
    "write_manifest",
]

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class ParseError(ValueError):
    """Malformed LIBSVM input; message carries the 1-based line number."""


def parse_libsvm(path_or_text, *, from_text: bool = False):
    """Parse LIBSVM lines into sparse instances.

    Each line is ``label idx:val idx:val ...`` with 1-based, strictly
    increasing indices. Labels must be in {-1, 0, +1} ({-1,+1} and {0,1}
    conventions both normalize to {0,1}). Blank lines are skipped. Returns
    ``(instances, max_index)`` where instances is a list of
    ``(ConceptVector, label)`` with vectors sized to the max index seen.
    """
    if from_text:
        lines = str(path_or_text).splitlines()
    else:
        lines = Path(path_or_text).read_text().splitlines()
    raw: list[tuple[np.ndarray, np.ndarray, float]] = []
    max_index = 0
    for ln, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label_val = float(tokens[0])
        except ValueError:
            raise ParseError(f"line {ln}: bad label {tokens[0]!r}") from None
        if label_val == -1.0 or label_val == 0.0:
            label = 0.0
        elif label_val == 1.0:
            label = 1.0
        else:
            raise ParseError(f"line {ln}: label {tokens[0]!r} not in {{-1,0,+1}}")
        idxs: list[int] = []
        vals: list[float] = []
        prev = 0
        for tok in tokens[1:]:
            part = tok.split(":")
            if len(part) != 2:
                raise ParseError(f"line {ln}: bad feature token {tok!r}")
            try:
                idx = int(part[0])
                val = float(part[1])
            except ValueError:
                raise ParseError(f"line {ln}: bad feature token {tok!r}") from None
            if idx < 1:
                raise ParseError(f"line {ln}: feature index {idx} < 1")
            if idx <= prev:
                raise ParseError(
                    f"line {ln}: feature indices must be strictly increasing "
                    f"({idx} after {prev})")
            if not np.isfinite(val):
                raise ParseError(f"line {ln}: non-finite value in {tok!r}")
            prev = idx
            idxs.append(idx - 1)
            vals.append(val)
        max_index = max(max_index, prev)
        raw.append((np.array(idxs, dtype=np.int64),
                    np.array(vals, dtype=np.float64), label))
    instances = [(ConceptVector(i, v, max_index), lab) for i, v, lab in raw]
    return instances, max_index


def serialize_libsvm(pairs: Sequence[tuple[ConceptVector, float]]) -> str:
    """Inverse of parse_libsvm on normalized data (labels written as 0/1)."""
    out = []
    for vec, label in pairs:
        toks = [str(int(label))]
        toks.extend(f"{int(i) + 1}:{float(v)!r}"
                    for i, v in zip(vec.indices, vec.values))
        out.append(" ".join(toks))
    return "\n".join(out) + "\n"


def split_train_val(pairs: Sequence, val_fraction: float, seed: int):
    """Seeded uniform shuffle, then suffix of length floor(n*frac) is val."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction {val_fraction} outside [0, 1)")
    n = len(pairs)
    k = int(n * val_fraction)
    perm = np.random.default_rng(seed).permutation(n)
    train = [pairs[i] for i in perm[:n - k]]
    val = [pairs[i] for i in perm[n - k:]]
    return train, val


class SparseRows:
    """CSR block: row i holds entries cols[indptr[i]:indptr[i+1]]."""

    __slots__ = ("indptr", "cols", "vals", "dim")

    def __init__(self, indptr, cols, vals, dim: int):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.cols = np.ascontiguousarray(cols, dtype=np.int64)
        self.vals = np.ascontiguousarray(vals, dtype=np.float64)
        self.dim = int(dim)

    def __len__(self) -> int:
        return self.indptr.size - 1

    @classmethod
    def from_vectors(cls, vectors: Sequence[ConceptVector], dim: int) -> "SparseRows":
        counts = np.array([v.indices.size for v in vectors], dtype=np.int64)
        indptr = np.concatenate(([0], np.cumsum(counts)))
        if vectors:
            cols = np.concatenate([v.indices for v in vectors])
            vals = np.concatenate([v.values for v in vectors])
        else:
            cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        for v in vectors:
            if v.size != dim:
                raise SchemaError(f"vector size {v.size} != block dim {dim}")
        return cls(indptr, cols, vals, dim)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseRows":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        counts = np.bincount(rows, minlength=dense.shape[0])
        indptr = np.concatenate(([0], np.cumsum(counts)))
        return cls(indptr, cols.astype(np.int64), dense[rows, cols], dense.shape[1])

    def row(self, i: int) -> ConceptVector:
        s, e = self.indptr[i], self.indptr[i + 1]
        return ConceptVector(self.cols[s:e], self.vals[s:e], self.dim)

    def gather_dense(self, rows: np.ndarray | None = None) -> np.ndarray:
        """Dense (k, dim) matrix for the given row ids (all rows when None)."""
        if rows is None:
            rows = np.arange(len(self), dtype=np.int64)
        rows = np.asarray(rows, dtype=np.int64)
        counts = self.indptr[rows + 1] - self.indptr[rows]
        out = np.zeros((rows.size, self.dim))
        if counts.sum() == 0:
            return out
        take = _ranges(self.indptr[rows], counts)
        out_rows = np.repeat(np.arange(rows.size), counts)
        out[out_rows, self.cols[take]] = self.vals[take]
        return out

    def column(self, col: int) -> np.ndarray:
        """Dense values of one column across all rows."""
        out = np.zeros(len(self))
        hit = self.cols == col
        if hit.any():
            row_of = np.repeat(np.arange(len(self)), np.diff(self.indptr))
            out[row_of[hit]] = self.vals[hit]
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.indptr.tobytes())
        h.update(self.cols.tobytes())
        h.update(self.vals.tobytes())
        return h.hexdigest()


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate arange(s, s+c) for each (s, c); vectorized."""
    counts = np.asarray(counts, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    live = counts > 0
    seg_pos = np.concatenate(([0], np.cumsum(counts)[:-1]))[live]
    seg_start = starts[live]
    seg_count = counts[live]
    # increments of 1 inside a segment; at each segment head, jump from the
    # previous segment's last value to this segment's first
    out = np.ones(total, dtype=np.int64)
    prev_last = seg_start[:-1] + seg_count[:-1] - 1
    out[seg_pos[0]] = seg_start[0]
    out[seg_pos[1:]] = seg_start[1:] - prev_last
    np.cumsum(out, out=out)
    return out


@dataclass
class TaskDataset:
    """One task: schema plus train/val/test splits over schema.task_vocab."""

    schema: TaskSchema
    splits: dict[str, tuple[SparseRows, np.ndarray]]

    def __post_init__(self):
        for name, (rows, labels) in self.splits.items():
            if name not in SPLITS:
                raise SchemaError(f"unknown split {name!r}")
            if rows.dim != len(self.schema.task_vocab):
                raise SchemaError(
                    f"split {name!r} dim {rows.dim} != task vocab "
                    f"{len(self.schema.task_vocab)}")
            if len(rows) != labels.shape[0]:
                raise SchemaError(f"split {name!r}: rows/labels length mismatch")

    @classmethod
    def from_pairs(cls, schema: TaskSchema,
                   split_pairs: dict[str, Sequence[tuple[ConceptVector, float]]]):
        splits = {}
        for name, pairs in split_pairs.items():
            rows = SparseRows.from_vectors([p[0] for p in pairs],
                                           len(schema.task_vocab))
            labels = np.array([p[1] for p in pairs], dtype=np.float64)
            splits[name] = (rows, labels)
        return cls(schema, splits)

    def n(self, split: str) -> int:
        return len(self.splits[split][0]) if split in self.splits else 0

    def labels(self, split: str) -> np.ndarray:
        return self.splits[split][1]

    def pairs(self, split: str):
        rows, labels = self.splits[split]
        return [(rows.row(i), float(labels[i])) for i in range(len(rows))]

    def dense(self, split: str, *, masked: bool = True) -> np.ndarray:
        """Dense inputs over the task vocabulary; masked zeroes the
        coordinates of causal_mask that exist in this vocabulary (the label
        concept usually does not, for supervised tasks)."""
        rows, _ = self.splits[split]
        out = rows.gather_dense()
        if masked:
            local = [self.schema.task_vocab.index(c)
                     for c in self.schema.causal_mask
                     if c in self.schema.task_vocab]
            if local:
                out[:, np.array(local, dtype=np.int64)] = 0.0
        return out


def _feature_names(count: int) -> list[str]:
    width = len(str(count))
    return [f"f{i + 1:0{width}d}" for i in range(count)]


def ingest_task(train_path, test_path, task_id: str, *,
                val_fraction: float = 0.1, seed: int = 0,
                min_support: int = 1, standardize: bool = False) -> TaskDataset:
    """Parse one supervised LIBSVM dataset into a self-aligned TaskDataset.

    Feature concepts are named f0001.. (zero padded to the max index width so
    lexicographic order matches index order); the label concept is
    ``label::<task_id>``. The returned schema is aligned against the task's
    own meta-vocabulary (features + label) with the causal mask computed on
    the training split.

    With ``standardize``, features are z-scored with train-split statistics;
    rows are re-sparsified afterwards, so "active" in mask computations then
    means "differs from the training mean".
    """
    train_pairs, n_train_feats = parse_libsvm(train_path)
    test_pairs, n_test_feats = parse_libsvm(test_path)
    n_feats = max(n_train_feats, n_test_feats)
    if n_feats == 0:
        raise ParseError("no features found in input")
    # re-embed into the common width
    def resize(pairs):
        return [(ConceptVector(v.indices, v.values, n_feats), y) for v, y in pairs]
    train_pairs, test_pairs = resize(train_pairs), resize(test_pairs)
    train_pairs, val_pairs = split_train_val(train_pairs, val_fraction, seed)

    names = _feature_names(n_feats)
    task_vocab = Vocabulary(names)
    label_concept = LABEL_PREFIX + task_id
    meta_vocab = align_vocabularies([task_vocab], [label_concept])

    split_pairs = {"train": train_pairs, "val": val_pairs, "test": test_pairs}
    schema = TaskSchema.build(task_id, label_concept, task_vocab, meta_vocab,
                              {label_concept}, loss_kind="binary")
    task = TaskDataset.from_pairs(schema, split_pairs)

    if standardize:
        train_rows, _ = task.splits["train"]
        dense = train_rows.gather_dense()
        mu = dense.mean(axis=0)
        sd = dense.std(axis=0)
        sd[sd == 0.0] = 1.0
        new_splits = {}
        for name, (rows, labels) in task.splits.items():
            z = (rows.gather_dense() - mu) / sd
            new_splits[name] = (SparseRows.from_dense(z), labels)
        task = TaskDataset(schema, new_splits)

    # causal mask from the training footprint (features + label coordinate)
    foot = _footprint(task, meta_vocab, "train")
    mask = compute_causal_mask([foot.row(i) for i in range(len(foot))],
                               task.labels("train"), label_concept, meta_vocab,
                               min_support)
    schema = schema.with_alignment(meta_vocab, mask)
    return TaskDataset(schema, task.splits)


def _footprint(task: TaskDataset, meta_vocab: Vocabulary, split: str) -> SparseRows:
    """Map a task split into meta space; add the label value at the label
    coordinate when the label concept is not already a task feature."""
    rows, labels = task.splits[split]
    schema = task.schema
    if schema.task_vocab == meta_vocab and schema.label_concept in schema.task_vocab:
        return rows  # already full footprints; share storage
    proj = vocab_projection(schema.task_vocab, meta_vocab)
    n = len(rows)
    row_ids = np.repeat(np.arange(n, dtype=np.int64), np.diff(rows.indptr))
    cols = proj[rows.cols]
    vals = rows.vals
    if schema.label_concept not in schema.task_vocab:
        label_col = meta_vocab.index(schema.label_concept)
        live = labels != 0.0  # zero labels are implicit in sparse storage
        row_ids = np.concatenate((row_ids, np.flatnonzero(live)))
        cols = np.concatenate((cols, np.full(int(live.sum()), label_col, np.int64)))
        vals = np.concatenate((vals, labels[live]))
    order = np.lexsort((cols, row_ids))
    row_ids, cols, vals = row_ids[order], cols[order], vals[order]
    counts = np.bincount(row_ids, minlength=n)
    indptr = np.concatenate(([0], np.cumsum(counts)))
    return SparseRows(indptr, cols, vals, len(meta_vocab))


@dataclass
class MetaDataset:
    """Aligned multi-task dataset over one shared meta-vocabulary.

    ``footprints[(task_index, split)]`` hold raw meta-space rows; every
    accessor that hands instances to a model applies the owning task's causal
    mask first, so observable vectors are always zero on masked coordinates.
    """

    meta_vocab: Vocabulary
    tasks: list[TaskDataset]
    footprints: dict[tuple[int, str], SparseRows]

    def __post_init__(self):
        fp = self.meta_vocab.fingerprint()
        ids = set()
        for t in self.tasks:
            if t.schema.meta_vocab.fingerprint() != fp:
                raise SchemaError(
                    f"task {t.schema.task_id} aligned against a different "
                    f"meta-vocabulary")
            if t.schema.task_id in ids:
                raise SchemaError(f"duplicate task_id {t.schema.task_id!r}")
            ids.add(t.schema.task_id)
        self._mask_idx = [t.schema.mask_indices() for t in self.tasks]

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def num_concepts(self) -> int:
        return len(self.meta_vocab)

    def task_index(self, task_id: str) -> int:
        for i, t in enumerate(self.tasks):
            if t.schema.task_id == task_id:
                return i
        raise SchemaError(f"no task {task_id!r} in meta-dataset")

    def sizes(self, split: str) -> np.ndarray:
        return np.array([t.n(split) for t in self.tasks], dtype=np.int64)

    def labels(self, task: int, split: str) -> np.ndarray:
        return self.tasks[task].labels(split)

    def loss_kinds(self) -> list[str]:
        return [t.schema.loss_kind for t in self.tasks]

    def dense_rows(self, task: int, rows: np.ndarray | None, split: str,
                   extra_mask: np.ndarray | None = None) -> np.ndarray:
        """Masked dense inputs for task ``task``.

        ``extra_mask`` adds meta coordinates to zero on top of the task's own
        causal mask (used by attention scoring)."""
        block = self.footprints[(task, split)]
        out = block.gather_dense(rows)
        out[:, self._mask_idx[task]] = 0.0
        if extra_mask is not None and extra_mask.size:
            out[:, extra_mask] = 0.0
        return out

    def dense_batch(self, task_ids: np.ndarray, row_ids: np.ndarray,
                    split: str = "train"):
        """Materialize a mixed-task batch: returns (X, y) in batch order."""
        task_ids = np.asarray(task_ids, dtype=np.int64)
        row_ids = np.asarray(row_ids, dtype=np.int64)
        X = np.zeros((task_ids.size, self.num_concepts))
        y = np.zeros(task_ids.size)
        for t in np.unique(task_ids):
            at = np.flatnonzero(task_ids == t)
            X[at] = self.dense_rows(int(t), row_ids[at], split)
            y[at] = self.labels(int(t), split)[row_ids[at]]
        return X, y

    def instances(self, split: str = "train") -> Iterator[tuple[int, ConceptVector, float]]:
        """All instances as (task_index, masked sparse vector, label)."""
        for t in range(self.num_tasks):
            block = self.footprints[(t, split)]
            labels = self.labels(t, split)
            masked = set(int(i) for i in self._mask_idx[t])
            for i in range(len(block)):
                vec = block.row(i)
                keep = np.array([j not in masked for j in vec.indices], dtype=bool)
                yield (t,
                       ConceptVector(vec.indices[keep], vec.values[keep], vec.size),
                       float(labels[i]))

    def recover_task(self, task: int, split: str):
        """Project raw footprints back onto the task vocabulary.

        Returns (ConceptVector over task_vocab, label) pairs equal to the
        ingested originals; masking never loses data at rest."""
        t = self.tasks[task]
        block = self.footprints[(task, split)]
        vocab = t.schema.task_vocab
        rev = np.full(self.num_concepts, -1, dtype=np.int64)
        rev[vocab_projection(vocab, self.meta_vocab)] = np.arange(len(vocab))
        labels = self.labels(task, split)
        out = []
        for i in range(len(block)):
            vec = block.row(i)
            local = rev[vec.indices]
            keep = local >= 0
            out.append((ConceptVector(local[keep], vec.values[keep], len(vocab)),
                        float(labels[i])))
        return out


def build_meta_dataset(tasks: Sequence[TaskDataset]) -> MetaDataset:
    """Assemble aligned tasks into one MetaDataset.

    Preconditions: all schemas reference the same meta-vocabulary. Tasks
    whose vocabulary IS the meta-vocabulary (auxiliary tasks) share footprint
    storage with their source block instead of copying.
    """
    if not tasks:
        raise SchemaError("meta-dataset needs at least one task")
    meta_vocab = tasks[0].schema.meta_vocab
    footprints: dict[tuple[int, str], SparseRows] = {}
    for ti, task in enumerate(tasks):
        for split in task.splits:
            footprints[(ti, split)] = _footprint(task, meta_vocab, split)
    return MetaDataset(meta_vocab, list(tasks), footprints)


def align_tasks(tasks: Sequence[TaskDataset],
                min_support: int = 1) -> list[TaskDataset]:
    """Re-align several tasks onto one shared meta-vocabulary.

    The meta-vocabulary is the sorted union of vocabularies and label
    concepts; each task's causal mask is recomputed from its training
    footprints against the full candidate space.
    """
    meta_vocab = align_vocabularies([t.schema.task_vocab for t in tasks],
                                    [t.schema.label_concept for t in tasks])
    out = []
    for t in tasks:
        provisional = t.schema.with_alignment(meta_vocab,
                                              {t.schema.label_concept})
        lifted = TaskDataset(provisional, t.splits)
        foot = _footprint(lifted, meta_vocab, "train")
        mask = compute_causal_mask([foot.row(i) for i in range(len(foot))],
                                   t.labels("train"), t.schema.label_concept,
                                   meta_vocab, min_support)
        out.append(TaskDataset(provisional.with_alignment(meta_vocab, mask),
                               t.splits))
    return out


def single_task_alignment(base: TaskDataset) -> tuple[Vocabulary, dict[str, SparseRows]]:
    """Shared entity footprints for the single-task construction.

    Every auxiliary task sees the same records (features plus the supervised
    label as an ordinary concept), so the footprint blocks are built once and
    shared across all tasks.
    """
    meta_vocab = base.schema.meta_vocab
    blocks = {split: _footprint(base, meta_vocab, split) for split in base.splits}
    return meta_vocab, blocks


def build_auxiliary_tasks(base: TaskDataset, policy: str = "all", *,
                          sample_k: int = 0, seed: int = 0,
                          min_support: int = 1) -> list[TaskDataset]:
    """One auxiliary task per selected feature of ``base``.

    Task ``aux:<feature>`` predicts that feature's value from the rest of the
    record (the supervised label included, it is masked only where leakage
    exists). Features constant on the training split are skipped with a
    warning. Binary features (values in {0,1} across all splits) become
    binary tasks; anything else becomes regression with labels standardized
    by train statistics.

    ``policy``: 'all', or 'sample' with ``sample_k`` tasks drawn without
    replacement (seeded) from the eligible features.
    """
    if policy not in ("all", "sample"):
        raise ValueError(f"unknown auxiliary policy {policy!r}")
    meta_vocab, blocks = single_task_alignment(base)
    dense = {split: blocks[split].gather_dense() for split in blocks}
    train = dense["train"]
    n_train = train.shape[0]
    if n_train == 0:
        raise SchemaError("cannot build auxiliary tasks from an empty train split")

    feature_names = list(base.schema.task_vocab)
    eligible = []
    for name in feature_names:
        col = meta_vocab.index(name)
        v = train[:, col]
        if v.max() == v.min():
            log.warning("auxiliary task for %r skipped: constant on train", name)
            continue
        eligible.append(name)
    if policy == "sample":
        if sample_k < 0:
            raise ValueError("sample_k must be >= 0")
        k = min(sample_k, len(eligible))
        pick = np.random.default_rng(seed).choice(len(eligible), size=k,
                                                  replace=False)
        eligible = [eligible[i] for i in sorted(pick)]

    aux_tasks = []
    full_vocab = meta_vocab  # auxiliary tasks observe the whole record
    for name in eligible:
        col = meta_vocab.index(name)
        all_vals = np.concatenate([dense[s][:, col] for s in dense])
        binary = np.all((all_vals == 0.0) | (all_vals == 1.0))
        labels = {}
        if binary:
            for s in dense:
                labels[s] = dense[s][:, col].copy()
            kind = "binary"
        else:
            mu = train[:, col].mean()
            sd = train[:, col].std()
            for s in dense:
                labels[s] = (dense[s][:, col] - mu) / sd
            kind = "regression"
        constant, _ = constant_columns_by_activation(train, train[:, col],
                                                     min_support)
        mask = {meta_vocab.name(int(c)) for c in np.flatnonzero(constant)}
        schema = TaskSchema.build(f"aux:{name}", name, full_vocab, meta_vocab,
                                  mask, loss_kind=kind)
        splits = {s: (blocks[s], labels[s]) for s in blocks}
        aux_tasks.append(TaskDataset(schema, splits))
    return aux_tasks


class BatchSampler:
    """Mixed-task batches: task drawn proportionally to train split size,
    instance uniform within the task, with replacement. One PCG64 stream per
    sampler, so identical seeds give identical batch sequences."""

    def __init__(self, train_sizes: Sequence[int], batch_size: int, seed: int = 0):
        sizes = np.asarray(train_sizes, dtype=np.int64)
        if sizes.ndim != 1 or sizes.size == 0 or np.any(sizes < 0):
            raise ValueError("train_sizes must be non-negative and non-empty")
        total = int(sizes.sum())
        if total == 0:
            raise ValueError("cannot sample from zero training instances")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        weights = sizes / total
        cum = np.cumsum(weights)
        if abs(cum[-1] - 1.0) > 1e-12:
            raise ValueError("task weights do not sum to 1")
        cum[-1] = 1.0
        self.sizes = sizes
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self._cum = cum
        self._rng = np.random.default_rng(seed)

    def draw(self) -> tuple[np.ndarray, np.ndarray]:
        u = self._rng.random(self.batch_size)
        tasks = np.searchsorted(self._cum, u, side="right").astype(np.int64)
        r = self._rng.random(self.batch_size)
        rows = np.minimum((r * self.sizes[tasks]).astype(np.int64),
                          self.sizes[tasks] - 1)
        return tasks, rows


def write_manifest(path, meta: MetaDataset, vocab_path: str = "vocab.txt") -> str:
    """Human-readable meta-dataset manifest; returns the text written."""
    lines = [
        f"meta_vocab: {vocab_path} sha256={meta.meta_vocab.fingerprint()}",
        f"concepts: {meta.num_concepts}",
        f"tasks: {meta.num_tasks}",
    ]
    for ti, task in enumerate(meta.tasks):
        s = task.schema
        sizes = "/".join(str(task.n(sp)) for sp in SPLITS)
        lines.append(f"task {s.task_id}:")
        lines.append(f"  label: {s.label_concept}")
        lines.append(f"  loss: {s.loss_kind}")
        members = " ".join(sorted(s.causal_mask))
        lines.append(f"  cmask ({len(s.causal_mask)}): {members}")
        lines.append(f"  sizes train/val/test: {sizes}")
        sums = " ".join(
            f"{sp}={meta.footprints[(ti, sp)].checksum()[:16]}"
            for sp in SPLITS if (ti, sp) in meta.footprints)
        lines.append(f"  checksums: {sums}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text

"""Concept vocabularies, task schemas, alignment, and leakage masks.

A *concept* is a named input coordinate. Tasks arrive with their own
vocabularies; alignment produces one shared meta-vocabulary (the
lexicographically sorted union of all task vocabularies and label concepts),
and every instance is embedded into it as a sparse vector. Each task then gets
a *causal mask*: the set of concepts whose activation pins the task's label to
a single value on the training data (plus the label concept itself). Those
coordinates are zeroed whenever an instance is materialized for that task, so
a model can never read its own answer, while other tasks keep full view.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SchemaError",
    "Vocabulary",
    "ConceptVector",
    "TaskSchema",
    "align_vocabularies",
    "compute_causal_mask",
    "constant_columns_by_activation",
    "augmented_vocab",
    "vocab_projection",
    "pad_mask",
]

LABEL_PREFIX = "label::"


class SchemaError(ValueError):
    """Inconsistent vocabularies, masks, or out-of-range concept references."""


class Vocabulary:
    """An ordered set of unique concept names with O(1) name<->index lookup."""

    __slots__ = ("names", "_index")

    def __init__(self, names: Iterable[str]):
        self.names: tuple[str, ...] = tuple(names)
        self._index = {name: i for i, name in enumerate(self.names)}
        if len(self._index) != len(self.names):
            seen: set[str] = set()
            dup = next(n for n in self.names if n in seen or seen.add(n))
            raise SchemaError(f"duplicate concept name: {dup!r}")
        for name in self.names:
            if not name:
                raise SchemaError("empty concept name")

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.names == other.names

    def __hash__(self) -> int:
        return hash(self.names)

    def __repr__(self) -> str:
        return f"Vocabulary({len(self.names)} concepts)"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"concept {name!r} not in vocabulary") from None

    def name(self, i: int) -> str:
        if not 0 <= i < len(self.names):
            raise SchemaError(f"concept index {i} out of range [0, {len(self.names)})")
        return self.names[i]

    # serialization: one concept name per line, order preserved
    def to_lines(self) -> str:
        return "\n".join(self.names) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "Vocabulary":
        return cls(line for line in text.splitlines() if line)

    def fingerprint(self) -> str:
        """Stable content hash, used to pair checkpoints with datasets."""
        return hashlib.sha256(self.to_lines().encode()).hexdigest()


@dataclass(frozen=True)
class ConceptVector:
    """Sparse vector over some vocabulary: strictly increasing indices."""

    indices: np.ndarray
    values: np.ndarray
    size: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        val = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.shape != val.shape or idx.ndim != 1:
            raise SchemaError("indices/values must be equal-length 1-D arrays")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.size:
                raise SchemaError(
                    f"concept index out of range [0, {self.size}): "
                    f"[{idx[0]}, {idx[-1]}]")
            if np.any(np.diff(idx) <= 0):
                raise SchemaError("concept indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise SchemaError("concept values must be finite")

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConceptVector) and self.size == other.size
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class TaskSchema:
    """Everything needed to materialize one task's instances.

    ``causal_mask`` always contains ``label_concept``; ``aug_vocab`` is the
    meta-vocabulary minus the mask, in meta order, so mask and aug_vocab
    partition the meta-vocabulary.
    """

    task_id: str
    label_concept: str
    task_vocab: Vocabulary
    meta_vocab: Vocabulary
    causal_mask: frozenset[str]
    aug_vocab: Vocabulary
    loss_kind: str  # 'binary' or 'regression'

    def __post_init__(self):
        if self.loss_kind not in ("binary", "regression"):
            raise SchemaError(f"unknown loss_kind {self.loss_kind!r}")
        if self.label_concept not in self.causal_mask:
            raise SchemaError(
                f"task {self.task_id}: label {self.label_concept!r} missing "
                f"from its causal mask")
        for name in self.causal_mask:
            if name not in self.meta_vocab:
                raise SchemaError(
                    f"task {self.task_id}: mask member {name!r} not in the "
                    f"meta-vocabulary")
        for name in self.task_vocab:
            if name not in self.meta_vocab:
                raise SchemaError(
                    f"task {self.task_id}: concept {name!r} not in the "
                    f"meta-vocabulary")
        expect = tuple(n for n in self.meta_vocab if n not in self.causal_mask)
        if self.aug_vocab.names != expect:
            raise SchemaError(
                f"task {self.task_id}: aug_vocab is not meta minus mask")

    @classmethod
    def build(cls, task_id: str, label_concept: str, task_vocab: Vocabulary,
              meta_vocab: Vocabulary, causal_mask: Iterable[str],
              loss_kind: str = "binary") -> "TaskSchema":
        mask = frozenset(causal_mask) | {label_concept}
        return cls(task_id=task_id, label_concept=label_concept,
                   task_vocab=task_vocab, meta_vocab=meta_vocab,
                   causal_mask=mask,
                   aug_vocab=augmented_vocab(meta_vocab, mask),
                   loss_kind=loss_kind)

    def with_alignment(self, meta_vocab: Vocabulary,
                       causal_mask: Iterable[str]) -> "TaskSchema":
        mask = frozenset(causal_mask) | {self.label_concept}
        return replace(self, meta_vocab=meta_vocab, causal_mask=mask,
                       aug_vocab=augmented_vocab(meta_vocab, mask))

    def mask_indices(self) -> np.ndarray:
        """Meta indices of the masked coordinates, sorted ascending."""
        return np.array(sorted(self.meta_vocab.index(n) for n in self.causal_mask),
                        dtype=np.int64)


def align_vocabularies(task_vocabs: Sequence[Vocabulary],
                       label_concepts: Sequence[str]) -> Vocabulary:
    """Sorted union of all task vocabularies and label concepts.

    Lexicographic order makes the meta-vocabulary independent of task order
    and of duplicate membership, which keeps checkpoints comparable across
    ingestion runs.
    """
    names: set[str] = set()
    for vocab in task_vocabs:
        names.update(vocab.names)
    names.update(label_concepts)
    if not names:
        raise SchemaError("alignment over zero concepts")
    return Vocabulary(sorted(names))


def augmented_vocab(meta_vocab: Vocabulary, mask: Iterable[str]) -> Vocabulary:
    """Meta-vocabulary minus the mask, preserving meta order."""
    mask = set(mask)
    unknown = mask.difference(meta_vocab.names)
    if unknown:
        raise SchemaError(f"mask members not in meta-vocabulary: {sorted(unknown)}")
    return Vocabulary(n for n in meta_vocab if n not in mask)


def constant_columns_by_activation(dense: np.ndarray, targets: np.ndarray,
                                   min_support: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """For each column c of ``dense``: is ``targets`` constant where c != 0?

    Returns (constant, support): ``constant[c]`` is True when column c is
    active on at least ``min_support`` rows and the target takes a single
    value on all of them (exact equality, either target value). Columns below
    the support floor report False. Complexity O(n * C) per call.
    """
    dense = np.asarray(dense, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if dense.ndim != 2 or targets.shape != (dense.shape[0],):
        raise SchemaError("activation table needs (n, C) data and (n,) targets")
    active = dense != 0.0
    support = active.sum(axis=0)
    t = targets[:, None]
    hi = np.where(active, t, -np.inf).max(axis=0)
    lo = np.where(active, t, np.inf).min(axis=0)
    constant = (support >= max(min_support, 1)) & (hi == lo)
    return constant, support


def compute_causal_mask(vectors: Sequence[ConceptVector], labels: Sequence[float],
                        label_concept: str, candidates: Vocabulary,
                        min_support: int = 1) -> frozenset[str]:
    """Concepts whose activation pins the label, plus the label itself.

    ``vectors`` are indexed over ``candidates``. A concept is masked when it
    is active (non-zero) on at least ``min_support`` training instances and
    the label is the same on every one of them; this catches both
    orientations (always-1 and always-0 labels), e.g. disjoint one-hot
    buckets of the label variable. With no co-occurrence structure the mask
    is exactly {label_concept}.
    """
    if label_concept not in candidates:
        raise SchemaError(f"label {label_concept!r} not in candidate vocabulary")
    labels_arr = np.asarray(labels, dtype=np.float64)
    n = len(vectors)
    if labels_arr.shape != (n,):
        raise SchemaError("one label per instance required")
    C = len(candidates)
    masked = {label_concept}
    if n == 0:
        return frozenset(masked)
    # group activations by concept without densifying the full n x C table
    cols = np.concatenate([v.indices for v in vectors]) if n else np.zeros(0, np.int64)
    rows = np.concatenate([np.full(v.indices.size, i, dtype=np.int64)
                           for i, v in enumerate(vectors)])
    vals = np.concatenate([v.values for v in vectors])
    live = vals != 0.0
    cols, rows = cols[live], rows[live]
    if cols.size:
        if cols.max() >= C:
            raise SchemaError("vector index exceeds candidate vocabulary")
        order = np.argsort(cols, kind="stable")
        cols, rows = cols[order], rows[order]
        boundaries = np.flatnonzero(np.diff(cols)) + 1
        starts = np.concatenate(([0], boundaries))
        stops = np.concatenate((boundaries, [cols.size]))
        floor = max(min_support, 1)
        for s, e in zip(starts, stops):
            if e - s < floor:
                continue
            seg = labels_arr[rows[s:e]]
            if seg.max() == seg.min():
                masked.add(candidates.name(int(cols[s])))
    return frozenset(masked)


def vocab_projection(src: Vocabulary, dst: Vocabulary) -> np.ndarray:
    """Index map m with dst[m[i]] == src[i]; every src name must exist in dst."""
    try:
        return np.array([dst.index(n) for n in src], dtype=np.int64)
    except SchemaError as e:
        raise SchemaError(f"projection failed: {e}") from None


def pad_mask(v: ConceptVector, v_vocab: Vocabulary,
             schema: TaskSchema) -> np.ndarray:
    """Embed a task-local sparse vector into dense meta space, then zero the
    task's masked coordinates.

    ``v`` is indexed over ``v_vocab`` (the task vocabulary, or the augmented
    vocabulary, or the meta-vocabulary itself); absent coordinates are 0.
    """
    if v.size != len(v_vocab):
        raise SchemaError(
            f"vector size {v.size} does not match vocabulary of {len(v_vocab)}")
    out = np.zeros(len(schema.meta_vocab))
    if v.indices.size:
        if v_vocab == schema.meta_vocab:
            out[v.indices] = v.values
        else:
            proj = vocab_projection(v_vocab, schema.meta_vocab)
            out[proj[v.indices]] = v.values
    out[schema.mask_indices()] = 0.0
    return out

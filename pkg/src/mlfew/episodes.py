"""Multi-label episode construction: N-way K-shot tasks with varying support size.

A sample may carry several labels, so one support example can cover more
than one of the episode's classes. The sampler guarantees at least K
covering samples per chosen class while allowing the support set to be
smaller than K*N through that multi-coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EpisodeError(Exception):
    """Base class for episode construction failures."""


class InsufficientClasses(EpisodeError):
    """Fewer classes with K covering samples than the requested way."""


class InsufficientShots(EpisodeError):
    """Not enough distinct samples to satisfy the shot or query budget."""


class EmptyRestriction(EpisodeError):
    """A sample shares no labels with the episode's label set."""


@dataclass(frozen=True, eq=False)
class Sample:
    """One datum: a feature vector plus its nonempty set of class labels."""

    features: np.ndarray
    labels: frozenset

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", frozenset(self.labels))
        if not self.labels:
            raise ValueError("a sample must carry at least one label")


@dataclass
class Episode:
    """A sampled task: ordered label set, support samples, query samples.

    Support and query samples carry labels already restricted to
    ``label_set``; the source dataset indices are kept for determinism and
    disjointness checks.
    """

    label_set: list
    support: list
    query: list
    support_indices: list = field(default_factory=list)
    query_indices: list = field(default_factory=list)
    way: int = 0
    shot: int = 0


def encode_labels(sample: Sample, label_set) -> np.ndarray:
    """Binary vector aligned with ``label_set``; raises if no overlap."""
    values = np.array([1.0 if c in sample.labels else 0.0 for c in label_set])
    if not values.any():
        raise EmptyRestriction(f"labels {set(sample.labels)} disjoint from {list(label_set)}")
    return values


def label_matrix(samples, label_set) -> np.ndarray:
    """Stack encode_labels over ``samples`` into a (len(samples), way) matrix."""
    return np.stack([encode_labels(s, label_set) for s in samples])


def _restrict(sample: Sample, label_set) -> Sample:
    kept = sample.labels & frozenset(label_set)
    if not kept:
        raise EmptyRestriction("restriction produced an empty label set")
    return Sample(sample.features, kept)


def _class_index(dataset) -> dict:
    index = {}
    for i, sample in enumerate(dataset):
        for label in sample.labels:
            index.setdefault(label, []).append(i)
    return index


def sample_episode(dataset, way: int, shot: int, query_count: int,
                   rng: np.random.Generator) -> Episode:
    """Draw one multi-label episode from ``dataset``.

    Classes are drawn among those with at least ``shot`` covering samples.
    Support is built class by class in random order, topping each class up
    to ``shot`` covering samples; a sample spanning several episode classes
    counts toward each, so the support can hold fewer than way*shot
    samples. Queries are drawn from the leftover samples that share at
    least one episode label. Defaults to ``query_count = way // 2`` when
    ``query_count`` is None.
    """
    if query_count is None:
        query_count = max(1, way // 2)
    if query_count < 1:
        raise ValueError("query_count must be at least 1")
    index = _class_index(dataset)
    eligible = sorted((c for c, idxs in index.items() if len(idxs) >= shot), key=str)
    if len(eligible) < way:
        raise InsufficientClasses(
            f"need {way} classes with >= {shot} samples, found {len(eligible)}")
    label_set = [eligible[i] for i in rng.choice(len(eligible), size=way, replace=False)]

    chosen = set(label_set)
    support_idx = []
    support_set = set()
    order = list(rng.permutation(way))
    for class_pos in order:
        label = label_set[class_pos]
        covered = sum(1 for i in support_idx if label in dataset[i].labels)
        if covered >= shot:
            continue
        pool = [i for i in index[label] if i not in support_set]
        needed = shot - covered
        if len(pool) < needed:
            raise InsufficientShots(f"class {label!r} has only {covered + len(pool)} "
                                    f"covering samples, need {shot}")
        picks = [pool[j] for j in rng.choice(len(pool), size=needed, replace=False)]
        for i in picks:
            support_idx.append(i)
            support_set.add(i)

    residual = [i for i in range(len(dataset))
                if i not in support_set and dataset[i].labels & chosen]
    if len(residual) < query_count:
        raise InsufficientShots(f"query pool holds {len(residual)} samples, "
                                f"need {query_count}")
    query_idx = [residual[j] for j in rng.choice(len(residual), size=query_count,
                                                 replace=False)]

    return Episode(
        label_set=label_set,
        support=[_restrict(dataset[i], label_set) for i in support_idx],
        query=[_restrict(dataset[i], label_set) for i in query_idx],
        support_indices=support_idx,
        query_indices=query_idx,
        way=way,
        shot=shot,
    )


def split_dataset(dataset, train_fraction: float, val_fraction: float,
                  rng: np.random.Generator):
    """Partition classes into disjoint train/val/test sets, then assign samples.

    A sample joins a partition only when all of its labels belong to that
    partition's classes; samples whose labels straddle partitions are
    dropped so no class leaks across splits.
    """
    if not (0.0 < train_fraction < 1.0 and 0.0 < val_fraction < 1.0):
        raise ValueError("fractions must lie in (0, 1)")
    if train_fraction + val_fraction >= 1.0:
        raise ValueError("train and val fractions must sum below 1")
    classes = sorted({label for s in dataset for label in s.labels}, key=str)
    if not classes:
        return [], [], []
    perm = rng.permutation(len(classes))
    shuffled = [classes[i] for i in perm]
    n_train = int(len(classes) * train_fraction)
    n_val = int(len(classes) * val_fraction)
    groups = (set(shuffled[:n_train]),
              set(shuffled[n_train:n_train + n_val]),
              set(shuffled[n_train + n_val:]))
    parts = ([], [], [])
    for sample in dataset:
        for part, group in zip(parts, groups):
            if sample.labels <= group:
                part.append(sample)
                break
    return parts

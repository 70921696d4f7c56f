"""Pairwise label-count prediction and histogram voting.

A small network looks at one support embedding, one query embedding, and
a context vector summarizing the whole support set, and predicts the
combined number of labels on the pair as a class over 1..2*way. At
inference each support sample casts a vote for the query's own count
(predicted combined count minus the support's known count); the votes are
histogrammed and the majority wins, with softmax probability mass
breaking ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor, concat, log, matmul, multiply, select_rows, softmax


def context_vector(support_emb: Tensor) -> Tensor:
    """Mean of the support embeddings as a single row, (1, n).

    Divides by the actual support size, which in the multi-label regime
    need not equal way * shot.
    """
    n_support = support_emb.data.shape[0]
    if n_support == 0:
        raise ValueError("support set is empty")
    averaging = np.full((1, n_support), 1.0 / n_support)
    return matmul(Tensor(averaging), support_emb)


def pair_count_logits(counter, support_emb: Tensor, query_emb: Tensor,
                      context: Tensor) -> Tensor:
    """Logits over combined counts for every (support, query) pair.

    Rows are query-major: all supports for query 0, then for query 1, and
    so on. Each input row is [support_emb, query_emb, context].
    """
    n_support = support_emb.data.shape[0]
    n_query = query_emb.data.shape[0]
    support_rows = select_rows(support_emb, np.tile(np.arange(n_support), n_query))
    query_rows = select_rows(query_emb, np.repeat(np.arange(n_query), n_support))
    context_rows = select_rows(context, np.zeros(n_support * n_query, dtype=int))
    return counter(concat([support_rows, query_rows, context_rows], axis=1))


def count_targets(support_labels: np.ndarray, query_labels: np.ndarray) -> np.ndarray:
    """True combined counts per pair, query-major, as 0-based class indices.

    The combined count of a pair is the sum of both samples' label counts
    restricted to the episode; class index c-1 encodes count c.
    """
    way = support_labels.shape[1]
    support_counts = support_labels.sum(axis=1).astype(int)
    query_counts = query_labels.sum(axis=1).astype(int)
    combined = (query_counts[:, None] + support_counts[None, :]).reshape(-1)
    if combined.min() < 2 or combined.max() > 2 * way:
        raise ValueError(f"combined counts must lie in [2, {2 * way}]")
    return combined - 1


def count_loss(logits: Tensor, target_classes: np.ndarray) -> Tensor:
    """Cross-entropy of the pair logits against the true combined counts."""
    n_pairs, n_out = logits.data.shape
    if len(target_classes) != n_pairs:
        raise ValueError("one target per pair required")
    onehot = np.zeros((n_pairs, n_out))
    onehot[np.arange(n_pairs), target_classes] = 1.0
    picked = multiply(softmax(logits), Tensor(onehot)).sum(axis=1)
    return -log(picked).sum()


def pair_count_predictions(logits: np.ndarray):
    """Softmax probabilities and argmax combined counts (1-based) per pair."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    counts = probs.argmax(axis=1) + 1
    return probs, counts


@dataclass
class CountHistogram:
    """Vote counts over query label-count estimates 0..2*way."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def count_histogram(pair_counts: np.ndarray, support_counts: np.ndarray,
                    way: int) -> CountHistogram:
    """Histogram of (predicted combined count - support's own count) per support.

    Differences outside [0, 2*way] are clamped into range before binning.
    """
    if len(pair_counts) != len(support_counts):
        raise ValueError("one combined-count prediction per support sample required")
    if np.any(support_counts < 1):
        raise ValueError("support label counts must be at least 1")
    diffs = np.clip(pair_counts - support_counts, 0, 2 * way)
    counts = np.bincount(diffs, minlength=2 * way + 1)
    return CountHistogram(counts=counts)


class VoteOutcome(NamedTuple):
    count: int
    fallback: bool


def vote_label_count(histogram: CountHistogram, pair_probs: np.ndarray,
                     support_counts: np.ndarray, way: int) -> VoteOutcome:
    """Majority vote over the histogram, restricted to counts 1..way.

    Ties are resolved by the largest total softmax mass the pairs assign
    to the tied count (looked up at combined count = count + support's own
    count); remaining ties go to the smaller count. When no vote lands in
    1..way the result falls back to 1 with ``fallback`` set.
    """
    votes = histogram.counts[1:way + 1]
    if votes.sum() == 0:
        return VoteOutcome(count=1, fallback=True)
    best = votes.max()
    tied = [c for c in range(1, way + 1) if histogram.counts[c] == best]
    if len(tied) == 1:
        return VoteOutcome(count=tied[0], fallback=False)
    n_out = pair_probs.shape[1]
    masses = []
    for candidate in tied:
        combined = candidate + support_counts
        valid = combined <= n_out
        mass = pair_probs[np.arange(len(support_counts))[valid],
                          combined[valid] - 1].sum()
        masses.append(mass)
    return VoteOutcome(count=tied[int(np.argmax(masses))], fallback=False)

"""Per-query per-class scoring heads and their training losses.

Three heads share the embedding network: nearest-prototype distances, a
learned pairwise relation score, and transductive label propagation over
a normalized similarity graph with a closed-form solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    clip,
    concat,
    exp,
    inverse,
    log,
    matmul,
    multiply,
    pairwise_sq_dists,
    reshape,
    select_rows,
    softmax,
    subtract,
)
from .episodes import label_matrix

HEAD_KINDS = ("proto", "relation", "lpn")


def compute_prototypes(support_emb: Tensor, support_labels: np.ndarray) -> Tensor:
    """Class prototypes: mean embedding over the supports covering each class.

    A support sample with several labels contributes to each of its
    classes' prototypes. ``support_labels`` is the binary (N_s, C) matrix.
    """
    counts = support_labels.sum(axis=0)
    if np.any(counts == 0):
        missing = int(np.argmin(counts))
        raise ValueError(f"class index {missing} has no supporting samples")
    averaging = (support_labels / counts).T
    return matmul(Tensor(averaging), support_emb)


def prototype_scores(prototypes: Tensor, query_emb: Tensor) -> Tensor:
    """Squared Euclidean distance from each query to each prototype, (N_q, C)."""
    return pairwise_sq_dists(query_emb, prototypes)


def prototype_loss(distances: Tensor, query_labels: np.ndarray) -> Tensor:
    """Squared gap between L1-normalized labels and softmax over negated distances."""
    norms = query_labels.sum(axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("every query needs at least one positive label")
    targets = query_labels / norms
    probs = softmax(-distances)
    diff = subtract(Tensor(targets), probs)
    return multiply(diff, diff).sum()


def class_mean_pairs(query_emb: Tensor, class_means: Tensor) -> Tensor:
    """All (query, class mean) pairs as concatenated rows, query-major order."""
    n_query = query_emb.data.shape[0]
    n_class = class_means.data.shape[0]
    query_rows = select_rows(query_emb, np.repeat(np.arange(n_query), n_class))
    mean_rows = select_rows(class_means, np.tile(np.arange(n_class), n_query))
    return concat([query_rows, mean_rows], axis=1)


def relation_scores(module, support_emb: Tensor, support_labels: np.ndarray,
                    query_emb: Tensor) -> Tensor:
    """Learned similarity in (0, 1) between each query and each class mean."""
    means = compute_prototypes(support_emb, support_labels)
    pairs = class_mean_pairs(query_emb, means)
    out = module(pairs)
    return reshape(out, (query_emb.data.shape[0], means.data.shape[0]))


def relation_loss(scores: Tensor, query_labels: np.ndarray, mode: str = "bce") -> Tensor:
    """Training objective for the relation head.

    ``mse`` sums squared score errors; ``bce`` is the negated log
    likelihood of the binary labels, clamped away from 0 and 1 so it is
    finite and minimized at perfect predictions.
    """
    y = Tensor(query_labels)
    if mode == "mse":
        diff = subtract(scores, y)
        return multiply(diff, diff).sum()
    if mode == "bce":
        p = clip(scores, 1e-7, 1.0 - 1e-7)
        pos = multiply(y, log(p))
        neg = multiply(Tensor(1.0 - query_labels), log(subtract(Tensor(1.0), p)))
        return -(pos + neg).sum()
    raise ValueError(f"unknown relation loss mode {mode!r}")


@dataclass
class PropagationGraph:
    """Similarity graph over support and query embeddings.

    ``weights`` is the symmetrized k-nearest-neighbour RBF matrix with zero
    diagonal; ``normalized`` is D^(-1/2) W D^(-1/2).
    """

    weights: Tensor
    normalized: Tensor
    alpha: float
    sigma_rbf: float
    k_nn: int


def _knn_mask(sq_dists: np.ndarray, k_nn: int) -> np.ndarray:
    n = sq_dists.shape[0]
    masked = sq_dists + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
    mask = np.zeros((n, n))
    neighbours = np.argsort(masked, axis=1, kind="stable")[:, :k_nn]
    mask[np.repeat(np.arange(n), k_nn), neighbours.reshape(-1)] = 1.0
    return np.maximum(mask, mask.T)


def build_graph(embeddings: Tensor, sigma_rbf: float = 1.0, k_nn: int | None = None,
                alpha: float = 0.99) -> PropagationGraph:
    """RBF similarity graph restricted to k nearest neighbours, symmetrized.

    Edge weight is exp(-sigma * squared distance) when either endpoint
    counts the other among its k nearest, and 0 otherwise.
    """
    n = embeddings.data.shape[0]
    if n < 2:
        raise ValueError("a graph needs at least two nodes")
    if sigma_rbf <= 0:
        raise ValueError("sigma_rbf must be positive")
    if k_nn is None:
        k_nn = min(10, n - 1)
    if not 1 <= k_nn < n:
        raise ValueError(f"k_nn must lie in [1, {n - 1}], got {k_nn}")
    sq = pairwise_sq_dists(embeddings, embeddings)
    mask = _knn_mask(sq.data, k_nn)
    weights = multiply(exp(sq * (-sigma_rbf)), Tensor(mask))
    return PropagationGraph(
        weights=weights,
        normalized=normalize_graph(weights),
        alpha=alpha,
        sigma_rbf=sigma_rbf,
        k_nn=k_nn,
    )


def normalize_graph(weights: Tensor) -> Tensor:
    """Symmetric degree normalization D^(-1/2) W D^(-1/2).

    Rows with zero total weight receive a unit self-loop first so the
    degree matrix stays invertible.
    """
    w = weights.data
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("weights must be square")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not np.allclose(w, w.T):
        raise ValueError("weights must be symmetric")
    degrees = w.sum(axis=1)
    isolated = degrees == 0.0
    if np.any(isolated):
        weights = weights + Tensor(np.diag(isolated.astype(float)))
    n = w.shape[0]
    d = weights.sum(axis=1)
    inv_sqrt = exp(log(d) * -0.5)
    scale = matmul(reshape(inv_sqrt, (n, 1)), reshape(inv_sqrt, (1, n)))
    return multiply(scale, weights)


def propagation_labels(support_labels: np.ndarray,
                       query_labels: np.ndarray | None,
                       n_query: int | None = None) -> np.ndarray:
    """Label matrix with classes as rows and nodes as columns.

    Support columns hold L1-normalized label vectors. Query columns hold
    normalized ground truth when ``query_labels`` is given, else zeros
    (the unknowns to be inferred).
    """
    sup = (support_labels / support_labels.sum(axis=1, keepdims=True)).T
    if query_labels is not None:
        quer = (query_labels / query_labels.sum(axis=1, keepdims=True)).T
    else:
        if n_query is None:
            raise ValueError("need n_query when query labels are absent")
        quer = np.zeros((sup.shape[0], n_query))
    return np.concatenate([sup, quer], axis=1)


def propagate(phi_x: Tensor, normalized: Tensor, alpha: float) -> Tensor:
    """Closed-form propagation: phi_x @ (I - alpha S)^(-1), tape-recorded."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    n = normalized.data.shape[0]
    system = subtract(Tensor(np.eye(n)), normalized * alpha)
    return matmul(phi_x, inverse(system))


def propagate_solve(phi_x: np.ndarray, normalized: np.ndarray,
                    alpha: float) -> np.ndarray:
    """Gradient-free propagation via a linear solve instead of an inverse."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    system = np.eye(normalized.shape[0]) - alpha * normalized
    return np.linalg.solve(system.T, phi_x.T).T


def propagate_iterative(phi_x: np.ndarray, normalized: np.ndarray, alpha: float,
                        tol: float = 1e-13, max_iters: int = 10000) -> np.ndarray:
    """Fixed-point propagation used as an internal consistency check.

    Iterates F <- alpha F S + (1 - alpha) phi_x until stationary; the fixed
    point equals (1 - alpha) times the closed form, so the result is
    rescaled before returning.
    """
    f = (1.0 - alpha) * phi_x
    for _ in range(max_iters):
        nxt = alpha * (f @ normalized) + (1.0 - alpha) * phi_x
        delta = np.max(np.abs(nxt - f))
        f = nxt
        if delta < tol:
            break
    return f / (1.0 - alpha)


def propagation_loss(f_star: Tensor, phi_full: np.ndarray) -> Tensor:
    """Squared Frobenius distance between propagated and true label matrices."""
    if f_star.data.shape != phi_full.shape:
        raise ValueError(f"shape mismatch: {f_star.data.shape} vs {phi_full.shape}")
    diff = subtract(f_star, Tensor(phi_full))
    return multiply(diff, diff).sum()


def head_scores(kind: str, episode, embedder, relation=None, alpha: float = 0.99,
                sigma_rbf: float = 1.0, k_nn: int | None = None) -> np.ndarray:
    """Per-query score vectors for any head; higher means more likely.

    Prototypical scores are negated distances, relation scores are the
    module outputs, and propagation scores are the query columns of the
    propagated label matrix.
    """
    if kind not in HEAD_KINDS:
        raise ValueError(f"unknown head kind {kind!r}")
    support_x = Tensor(np.stack([s.features for s in episode.support]))
    query_x = Tensor(np.stack([s.features for s in episode.query]))
    support_labels = label_matrix(episode.support, episode.label_set)
    emb_s = embedder(support_x)
    emb_q = embedder(query_x)

    if kind == "proto":
        prototypes = compute_prototypes(emb_s, support_labels)
        return -prototype_scores(prototypes, emb_q).data
    if kind == "relation":
        if relation is None:
            raise ValueError("relation head needs a relation module")
        return relation_scores(relation, emb_s, support_labels, emb_q).data

    all_emb = concat([emb_s, emb_q], axis=0)
    graph = build_graph(all_emb, sigma_rbf=sigma_rbf, k_nn=k_nn, alpha=alpha)
    phi_x = propagation_labels(support_labels, None, n_query=len(episode.query))
    f_star = propagate_solve(phi_x, graph.normalized.data, alpha)
    return f_star[:, len(episode.support):].T

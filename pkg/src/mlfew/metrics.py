"""Ranking and counting metrics for episodic evaluation.

Primary metric is mean average precision over queries; label-count
accuracy and exact-set hard-decision accuracy cover the counting side.
Summaries carry bootstrap confidence intervals over episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _ranking(scores: np.ndarray) -> np.ndarray:
    # Descending score; ties broken by the lower class index, deterministically.
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=float)))


def average_precision(scores, truth) -> float:
    """Average precision of one ranked score vector against binary truth.

    Classes are ranked by descending score; precision is read off at each
    true class's rank and averaged over the true classes.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and truth must be equal-length vectors")
    positives = truth.sum()
    if positives == 0:
        raise ValueError("truth must contain at least one positive class")
    hits = truth[_ranking(scores)]
    precision_at = np.cumsum(hits) / np.arange(1, len(scores) + 1)
    # fsum keeps the result independent of summation order.
    return math.fsum(precision_at[hits]) / positives


def macro_average_precision(score_matrix, truth_matrix) -> float:
    """Per-class AP over the episode's queries, averaged over classes.

    Classes with no positive query are skipped; raises if none remain.
    """
    score_matrix = np.asarray(score_matrix, dtype=float)
    truth_matrix = np.asarray(truth_matrix).astype(bool)
    values = [average_precision(score_matrix[:, j], truth_matrix[:, j])
              for j in range(score_matrix.shape[1]) if truth_matrix[:, j].any()]
    if not values:
        raise ValueError("no class has a positive query")
    return float(np.mean(values))


def label_count_accuracy(predicted, true) -> float:
    """Fraction of exact label-count matches."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise ValueError("count lists must align")
    if predicted.size == 0:
        raise ValueError("cannot score an empty list")
    return float((predicted == true).mean())


def hard_decision_correct(scores, count: int, truth) -> bool:
    """Exact-set check: do the top ``count`` classes equal the true set?"""
    truth = np.asarray(truth).astype(bool)
    if not 1 <= count <= len(truth):
        raise ValueError(f"count must lie in [1, {len(truth)}]")
    top = set(_ranking(scores)[:count].tolist())
    return top == set(np.flatnonzero(truth).tolist())


def hard_decision_accuracy(score_rows, counts, truth_rows) -> float:
    correct = [hard_decision_correct(s, c, t)
               for s, c, t in zip(score_rows, counts, truth_rows)]
    if not correct:
        raise ValueError("cannot score an empty list")
    return float(np.mean(correct))


@dataclass
class EpisodeResult:
    """Evaluation record for one episode: scores, truths, counts, per-query AP."""

    scores: np.ndarray
    truth: np.ndarray
    true_counts: list
    predicted_counts: list | None = None
    aps: list = field(default_factory=list)

    def __post_init__(self):
        if not self.aps:
            self.aps = [average_precision(self.scores[i], self.truth[i])
                        for i in range(len(self.truth))]


def map_over_episodes(results) -> float:
    """Mean of per-query average precision across all episodes."""
    aps = [ap for r in results for ap in r.aps]
    if not aps:
        raise ValueError("no queries to average over")
    return float(np.mean(aps))


def bootstrap_ci(values, rng: np.random.Generator, n_resamples: int = 1000,
                 level: float = 0.95):
    """Percentile bootstrap interval for the mean of ``values``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot bootstrap an empty sample")
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    return (float(np.quantile(means, tail)), float(np.quantile(means, 1.0 - tail)))


def summarize(results, rng: np.random.Generator, n_resamples: int = 1000) -> dict:
    """Aggregate episode results into the run-level report.

    Count-based metrics are null when no counts were predicted.
    """
    per_episode_ap = [float(np.mean(r.aps)) for r in results]
    report = {
        "episodes": len(results),
        "queries": int(sum(len(r.aps) for r in results)),
        "map": map_over_episodes(results),
        "map_ci": list(bootstrap_ci(per_episode_ap, rng, n_resamples)),
        "map_macro": float(np.mean([macro_average_precision(r.scores, r.truth)
                                    for r in results])),
        "lc": None,
        "hard_acc": None,
    }
    if all(r.predicted_counts is not None for r in results):
        predicted = [c for r in results for c in r.predicted_counts]
        true = [c for r in results for c in r.true_counts]
        report["lc"] = label_count_accuracy(predicted, true)
        rows = [r.scores[i] for r in results for i in range(len(r.aps))]
        truths = [r.truth[i] for r in results for i in range(len(r.aps))]
        report["hard_acc"] = hard_decision_accuracy(rows, predicted, truths)
    return report


CSV_COLUMNS = ("head", "way", "shot", "episodes", "seed", "nlc",
               "map", "map_ci_low", "map_ci_high", "map_macro", "lc", "hard_acc")


def csv_report(report: dict, config_fields: dict) -> str:
    """Header plus one aligned row for the run."""

    def fmt(value):
        if value is None:
            return ""
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, float):
            return repr(value)
        return str(value)

    values = {
        **config_fields,
        "map": report["map"],
        "map_ci_low": report["map_ci"][0],
        "map_ci_high": report["map_ci"][1],
        "map_macro": report["map_macro"],
        "lc": report["lc"],
        "hard_acc": report["hard_acc"],
    }
    header = ",".join(CSV_COLUMNS)
    row = ",".join(fmt(values.get(c)) for c in CSV_COLUMNS)
    return header + "\n" + row + "\n"

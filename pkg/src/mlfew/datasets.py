"""Synthetic multi-label task generator and JSONL dataset ingestion.

Generated classes live on well-separated Gaussian clusters; a sample with
several labels sits at the mean of its classes' centers, so feature norms
carry no information about the label count. The co-occurrence knob
interpolates between independent label draws and a fixed random partner
graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .episodes import Sample


class DataError(Exception):
    """Malformed or inconsistent dataset input."""


@dataclass
class SynthConfig:
    """Knobs for the synthetic generator.

    ``separation / noise`` controls difficulty; ``cooccurrence`` in [0, 1]
    biases additional labels toward a fixed random partner graph.
    """

    num_classes: int = 10
    feature_dim: int = 8
    samples_per_class: int = 50
    max_labels: int = 2
    separation: float = 1.0
    noise: float = 0.25
    cooccurrence: float = 0.0
    seed: int = 0

    def validate(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.max_labels < 1:
            raise ValueError("max_labels must be at least 1")
        if self.max_labels > self.num_classes:
            raise ValueError("max_labels cannot exceed num_classes")
        if self.separation <= 0 or self.noise < 0:
            raise ValueError("separation must be positive and noise non-negative")
        if not 0.0 <= self.cooccurrence <= 1.0:
            raise ValueError("cooccurrence must lie in [0, 1]")


def _partner_graph(num_classes: int, rng: np.random.Generator) -> dict:
    partners = {}
    for c in range(num_classes):
        others = [k for k in range(num_classes) if k != c]
        size = min(2, len(others))
        if size == 0:
            partners[c] = []
            continue
        picks = rng.choice(len(others), size=size, replace=False)
        partners[c] = sorted(others[i] for i in picks)
    return partners


def _draw_label_set(anchor, k, num_classes, partners, rho, rng):
    labels = [anchor]
    while len(labels) < k:
        use_graph = rho > 0.0 and rng.random() < rho
        if use_graph:
            candidates = sorted({p for c in labels for p in partners[c]} - set(labels))
        else:
            candidates = []
        if not candidates:
            candidates = sorted(set(range(num_classes)) - set(labels))
        labels.append(candidates[rng.integers(len(candidates))])
    return frozenset(labels)


def generate(config: SynthConfig):
    """Produce a deterministic list of samples for ``config``.

    Every class anchors ``samples_per_class`` samples; each sample draws a
    label-set size uniformly from 1..max_labels and its features are the
    mean of the member classes' centers plus Gaussian noise.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    directions = rng.standard_normal((config.num_classes, config.feature_dim))
    centers = config.separation * directions / np.linalg.norm(directions, axis=1,
                                                              keepdims=True)
    partners = _partner_graph(config.num_classes, rng)

    samples = []
    for anchor in range(config.num_classes):
        for _ in range(config.samples_per_class):
            k = int(rng.integers(1, config.max_labels + 1))
            labels = _draw_label_set(anchor, k, config.num_classes, partners,
                                     config.cooccurrence, rng)
            mean = centers[sorted(labels)].mean(axis=0)
            features = mean + config.noise * rng.standard_normal(config.feature_dim)
            samples.append(Sample(features, labels))
    return samples


def write_jsonl(samples, path):
    """Write samples to the line-per-record JSON interchange format."""
    with open(path, "w") as fh:
        for i, sample in enumerate(samples):
            record = {
                "id": f"s{i}",
                "features": [float(v) for v in sample.features],
                "labels": sorted(str(label) for label in sample.labels),
            }
            fh.write(json.dumps(record) + "\n")


def load_jsonl(path):
    """Load a JSONL dataset; returns (samples, label_names).

    Label strings are interned to integer ids indexing ``label_names``.
    Raises :class:`DataError` with a line number for malformed records and
    for inconsistent feature dimensions.
    """
    raw = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                features = [float(v) for v in record["features"]]
                labels = [str(v) for v in record["labels"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if not labels:
                raise DataError(f"{path}:{lineno}: empty label list")
            if dim is None:
                dim = len(features)
            elif len(features) != dim:
                raise DataError(f"{path}:{lineno}: feature dimension {len(features)} "
                                f"differs from {dim}")
            raw.append((features, labels))

    names = sorted({label for _, labels in raw for label in labels})
    ids = {name: i for i, name in enumerate(names)}
    samples = [Sample(np.array(features), frozenset(ids[v] for v in labels))
               for features, labels in raw]
    return samples, names

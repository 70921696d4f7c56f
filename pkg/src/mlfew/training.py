"""Episodic training loop, checkpointing, and evaluation runner.

Every episode: sample a task, embed support and query, compute the
selected head's loss (plus the weighted count loss when enabled), run the
tape backward, and take one Adam step. All randomness flows from seeded
generator streams so identical seeds give bitwise-identical runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import NumericalError, Tape, Tensor, concat
from .config import RunConfig
from .datasets import DataError, SynthConfig, generate, load_jsonl
from .episodes import Episode, label_matrix, sample_episode, split_dataset
from .heads import (
    build_graph,
    compute_prototypes,
    head_scores,
    propagate,
    propagation_labels,
    propagation_loss,
    prototype_loss,
    prototype_scores,
    relation_loss,
    relation_scores,
)
from .label_count import (
    context_vector,
    count_histogram,
    count_loss,
    count_targets,
    pair_count_logits,
    pair_count_predictions,
    vote_label_count,
)
from .metrics import EpisodeResult, summarize
from .networks import Adam, Mlp

# Seed-stream tags so the split, the init, each episode, and the bootstrap
# draw from independent deterministic generators.
_SPLIT, _INIT, _TRAIN_EP, _EVAL_EP, _BOOTSTRAP = 0, 1, 2, 3, 4


@dataclass
class EpisodicModel:
    """The trainable pieces for one run: embedder plus optional modules."""

    embedder: Mlp
    relation: Mlp | None
    counter: Mlp | None
    head: str
    way: int
    alpha: float
    sigma_rbf: float
    k_nn: int | None
    relation_mode: str = "bce"

    def parameters(self):
        params = list(self.embedder.parameters())
        if self.relation is not None:
            params.extend(self.relation.parameters())
        if self.counter is not None:
            params.extend(self.counter.parameters())
        return params

    def set_parameters(self, params):
        n_embed = 2 * len(self.embedder.weights)
        self.embedder.set_parameters(params[:n_embed])
        offset = n_embed
        if self.relation is not None:
            n_rel = 2 * len(self.relation.weights)
            self.relation.set_parameters(params[offset:offset + n_rel])
            offset += n_rel
        if self.counter is not None:
            self.counter.set_parameters(params[offset:])


def build_model(config: RunConfig, feature_dim: int,
                rng: np.random.Generator) -> EpisodicModel:
    embed_widths = [feature_dim, config.hidden_dim, config.hidden_dim,
                    config.embed_dim]
    embedder = Mlp(embed_widths, rng)
    relation = None
    if config.head == "relation":
        relation = Mlp([2 * config.embed_dim, 64, 8, 1], rng,
                       output_activation="sigmoid")
    counter = None
    if config.nlc:
        counter = Mlp([3 * config.embed_dim, 64, 2 * config.way], rng)
    return EpisodicModel(
        embedder=embedder,
        relation=relation,
        counter=counter,
        head=config.head,
        way=config.way,
        alpha=config.alpha,
        sigma_rbf=config.sigma_rbf,
        k_nn=config.k_nn,
        relation_mode=config.relation_mode,
    )


def episode_loss(model: EpisodicModel, episode: Episode, nlc: bool = False,
                 count_weight: float = 0.0) -> Tensor:
    """Summed loss over the episode's queries, recorded on the active tape."""
    support_x = Tensor(np.stack([s.features for s in episode.support]))
    query_x = Tensor(np.stack([s.features for s in episode.query]))
    support_labels = label_matrix(episode.support, episode.label_set)
    query_labels = label_matrix(episode.query, episode.label_set)
    emb_s = model.embedder(support_x)
    emb_q = model.embedder(query_x)

    if model.head == "proto":
        prototypes = compute_prototypes(emb_s, support_labels)
        loss = prototype_loss(prototype_scores(prototypes, emb_q), query_labels)
    elif model.head == "relation":
        scores = relation_scores(model.relation, emb_s, support_labels, emb_q)
        loss = relation_loss(scores, query_labels, model.relation_mode)
    elif model.head == "lpn":
        all_emb = concat([emb_s, emb_q], axis=0)
        graph = build_graph(all_emb, sigma_rbf=model.sigma_rbf, k_nn=model.k_nn,
                            alpha=model.alpha)
        phi_x = propagation_labels(support_labels, None, n_query=len(episode.query))
        phi_full = propagation_labels(support_labels, query_labels)
        f_star = propagate(Tensor(phi_x), graph.normalized, model.alpha)
        loss = propagation_loss(f_star, phi_full)
    else:
        raise ValueError(f"unknown head {model.head!r}")

    if nlc:
        if model.counter is None:
            raise ValueError("count loss requested but the model has no counter")
        context = context_vector(emb_s)
        logits = pair_count_logits(model.counter, emb_s, emb_q, context)
        targets = count_targets(support_labels, query_labels)
        loss = loss + count_loss(logits, targets) * count_weight
    return loss


def load_dataset(config: RunConfig):
    """Materialize the configured dataset (JSONL path or synthetic)."""
    if config.data is not None:
        samples, _ = load_jsonl(config.data)
        if not samples:
            raise DataError(f"{config.data}: dataset is empty")
        return samples
    return generate(synth_config(config))


def synth_config(config: RunConfig) -> SynthConfig:
    return SynthConfig(
        num_classes=config.synth_classes,
        feature_dim=config.synth_dim,
        samples_per_class=config.synth_samples_per_class,
        max_labels=config.synth_max_labels,
        separation=config.synth_separation,
        noise=config.synth_noise,
        cooccurrence=config.synth_cooccurrence,
        seed=config.seed,
    )


def split_for_run(config: RunConfig, dataset):
    rng = np.random.default_rng([config.seed, _SPLIT])
    return split_dataset(dataset, config.train_fraction, config.val_fraction, rng)


def train(config: RunConfig):
    """Run the episodic loop; returns (model, meta, per-episode losses)."""
    dataset = load_dataset(config)
    train_set, _, _ = split_for_run(config, dataset)
    if not train_set:
        raise DataError("training split is empty")
    feature_dim = len(train_set[0].features)
    model = build_model(config, feature_dim, np.random.default_rng([config.seed, _INIT]))
    optimizer = Adam(lr=config.learning_rate, halve_every=config.halve_every)
    params = model.parameters()
    query_count = config.resolved_query_count()

    losses = []
    for index in range(config.episodes):
        rng = np.random.default_rng([config.seed, _TRAIN_EP, index])
        episode = sample_episode(train_set, config.way, config.shot, query_count, rng)
        try:
            with Tape() as tape:
                for p in params:
                    tape.watch(p)
                loss = episode_loss(model, episode, nlc=config.nlc,
                                    count_weight=config.count_weight)
            grad_map = tape.backward(loss)
            params = optimizer.step(params, [grad_map[p] for p in params])
        except NumericalError as exc:
            raise NumericalError(f"training diverged at episode {index}: {exc}") from exc
        model.set_parameters(params)
        losses.append(float(loss.data))

    meta = {
        "head": config.head,
        "way": config.way,
        "shot": config.shot,
        "query_count": query_count,
        "episodes": config.episodes,
        "seed": config.seed,
        "nlc": config.nlc,
        "count_weight": config.count_weight,
        "alpha": config.alpha,
        "sigma_rbf": config.sigma_rbf,
        "k_nn": config.k_nn,
        "relation_mode": config.relation_mode,
        "feature_dim": feature_dim,
        "train_classes": sorted({str(c) for s in train_set for c in s.labels}),
    }
    return model, meta, losses


def save_checkpoint(model: EpisodicModel, meta: dict, path: str):
    payload = {
        "meta": meta,
        "embedder": model.embedder.to_arrays(),
        "relation": model.relation.to_arrays() if model.relation else None,
        "counter": model.counter.to_arrays() if model.counter else None,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str):
    with open(path) as fh:
        payload = json.load(fh)
    meta = payload["meta"]
    model = EpisodicModel(
        embedder=Mlp.from_arrays(payload["embedder"]),
        relation=Mlp.from_arrays(payload["relation"]) if payload["relation"] else None,
        counter=Mlp.from_arrays(payload["counter"]) if payload["counter"] else None,
        head=meta["head"],
        way=meta["way"],
        alpha=meta["alpha"],
        sigma_rbf=meta["sigma_rbf"],
        k_nn=meta["k_nn"],
        relation_mode=meta["relation_mode"],
    )
    return model, meta


def predict_counts(model: EpisodicModel, episode: Episode):
    """Voted label count per query, using the pairwise counter."""
    support_x = Tensor(np.stack([s.features for s in episode.support]))
    query_x = Tensor(np.stack([s.features for s in episode.query]))
    support_labels = label_matrix(episode.support, episode.label_set)
    emb_s = model.embedder(support_x)
    emb_q = model.embedder(query_x)
    context = context_vector(emb_s)
    logits = pair_count_logits(model.counter, emb_s, emb_q, context).data
    support_counts = support_labels.sum(axis=1).astype(int)
    n_support = len(episode.support)

    counts = []
    for q in range(len(episode.query)):
        block = logits[q * n_support:(q + 1) * n_support]
        probs, combined = pair_count_predictions(block)
        hist = count_histogram(combined, support_counts, model.way)
        outcome = vote_label_count(hist, probs, support_counts, model.way)
        counts.append(outcome.count)
    return counts


def evaluate_episode(model: EpisodicModel, episode: Episode,
                     nlc: bool) -> EpisodeResult:
    scores = head_scores(model.head, episode, model.embedder,
                         relation=model.relation, alpha=model.alpha,
                         sigma_rbf=model.sigma_rbf, k_nn=model.k_nn)
    truth = label_matrix(episode.query, episode.label_set)
    true_counts = [int(v) for v in truth.sum(axis=1)]
    predicted = predict_counts(model, episode) if nlc and model.counter else None
    return EpisodeResult(scores=scores, truth=truth, true_counts=true_counts,
                         predicted_counts=predicted)


def evaluate(model: EpisodicModel, meta: dict, config: RunConfig):
    """Sample held-out-class episodes and report metrics.

    Aborts when the evaluation split shares classes with the classes the
    checkpoint was trained on.
    """
    dataset = load_dataset(config)
    _, _, test_set = split_for_run(config, dataset)
    if not test_set:
        raise DataError("evaluation split is empty")
    test_classes = {str(c) for s in test_set for c in s.labels}
    leaked = test_classes & set(meta.get("train_classes", []))
    if leaked:
        raise DataError(f"class leakage between train and eval splits: {sorted(leaked)}")

    nlc = config.nlc and model.counter is not None
    query_count = config.resolved_query_count()
    results = []
    for index in range(config.eval_episodes):
        rng = np.random.default_rng([config.seed, _EVAL_EP, index])
        episode = sample_episode(test_set, config.way, config.shot, query_count, rng)
        results.append(evaluate_episode(model, episode, nlc))
    report = summarize(results, np.random.default_rng([config.seed, _BOOTSTRAP]))
    report["head"] = config.head
    report["way"] = config.way
    report["shot"] = config.shot
    report["seed"] = config.seed
    report["nlc"] = nlc
    return report, results

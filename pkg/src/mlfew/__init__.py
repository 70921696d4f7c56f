"""Multi-label few-shot classification via episodic meta-learning.

A numpy-backed engine that samples multi-label N-way K-shot episodes,
trains an embedding network jointly with one of three classifier heads
(nearest prototype, learned relation, graph label propagation) and an
auxiliary pairwise label counter, and evaluates ranked precision,
label-count accuracy, and exact-set decisions.
"""

from .autodiff import (
    AutodiffError,
    NumericalError,
    ShapeError,
    SingularMatrixError,
    Tape,
    Tensor,
    check_gradients,
)
from .config import ConfigError, RunConfig, build_config
from .datasets import DataError, SynthConfig, generate, load_jsonl, write_jsonl
from .episodes import (
    EmptyRestriction,
    Episode,
    EpisodeError,
    InsufficientClasses,
    InsufficientShots,
    Sample,
    encode_labels,
    label_matrix,
    sample_episode,
    split_dataset,
)
from .heads import (
    HEAD_KINDS,
    PropagationGraph,
    build_graph,
    compute_prototypes,
    head_scores,
    normalize_graph,
    propagate,
    propagate_iterative,
    propagate_solve,
    propagation_labels,
    propagation_loss,
    prototype_loss,
    prototype_scores,
    relation_loss,
    relation_scores,
)
from .label_count import (
    CountHistogram,
    VoteOutcome,
    context_vector,
    count_histogram,
    count_loss,
    count_targets,
    pair_count_logits,
    pair_count_predictions,
    vote_label_count,
)
from .metrics import (
    EpisodeResult,
    average_precision,
    bootstrap_ci,
    hard_decision_accuracy,
    hard_decision_correct,
    label_count_accuracy,
    macro_average_precision,
    map_over_episodes,
    summarize,
)
from .networks import Adam, Mlp
from .selftest import run_selftest
from .training import (
    EpisodicModel,
    build_model,
    episode_loss,
    evaluate,
    evaluate_episode,
    load_checkpoint,
    predict_counts,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

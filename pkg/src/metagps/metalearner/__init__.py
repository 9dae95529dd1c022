"""Prototype-initialized, modulated MAML-style meta-learner."""

from .components import (
    adapt_phi,
    contrastive_loss,
    cross_entropy,
    proto_init,
    prototypes,
    s2_modulate,
    score,
    select_high_confidence,
    self_training_loss,
    sharpen,
    soft_assign,
)
from .model import (
    VARIANTS,
    Ablation,
    HyperParams,
    MetaState,
    Problem,
    episode_objective,
    init_state,
    run_episode,
)
from .training import Schedule, TrainingError, meta_test, meta_train

__all__ = [
    "Ablation", "HyperParams", "MetaState", "Problem", "Schedule", "TrainingError", "VARIANTS",
    "adapt_phi", "contrastive_loss", "cross_entropy", "episode_objective", "init_state",
    "meta_test", "meta_train", "proto_init", "prototypes", "run_episode", "s2_modulate", "score",
    "select_high_confidence", "self_training_loss", "sharpen", "soft_assign",
]

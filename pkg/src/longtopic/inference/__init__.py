"""Variational inference: amortized encoders, the longitudinal objective with
exact hand-derived gradients, the training loop, and the per-stage topic
extension."""

from .dynamic import fit_dynamic_topics
from .loss import Batch, CorpusArrays, LossResult, longitudinal_loss
from .networks import (
    EncoderParams,
    PosteriorMoments,
    PosteriorSample,
    StageEncoder,
    counterfactual_encode,
    encode,
    reparameterize,
)
from .terms import (
    DISTANCE_KINDS,
    gaussian_kl_term,
    group_distance,
    mi_term,
)
from .trainer import (
    FittedModel,
    TrainConfig,
    default_init,
    encode_corpus,
    infer_proportions,
    load_model,
    param_registry,
    save_model,
    train,
)

__all__ = [
    "Batch",
    "CorpusArrays",
    "DISTANCE_KINDS",
    "EncoderParams",
    "FittedModel",
    "LossResult",
    "PosteriorMoments",
    "PosteriorSample",
    "StageEncoder",
    "TrainConfig",
    "counterfactual_encode",
    "default_init",
    "encode",
    "encode_corpus",
    "fit_dynamic_topics",
    "gaussian_kl_term",
    "group_distance",
    "infer_proportions",
    "load_model",
    "longitudinal_loss",
    "mi_term",
    "param_registry",
    "reparameterize",
    "save_model",
    "train",
]

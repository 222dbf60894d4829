"""Longitudinal heterogeneous topic modeling.

Documents arrive on a subject x stage grid with covariates and a group label;
topic proportions evolve through a learned per-stage transition while the
topics themselves stay time-consistent (or drift, optionally). Inference is
amortized variational with reparameterized gradients, plus a counterfactual
group-separation term. See the README for the CLI experiment runner.
"""

from .corpus import Corpus, load_corpus, save_corpus
from .errors import (
    ConfigError,
    DegenerateDesign,
    DivergedError,
    DuplicateDocument,
    FormatError,
    IoError,
    LongtopicError,
    MissingDocument,
    MissingLabel,
    NumericError,
    ShapeError,
    TooManyTopics,
    UnknownDistance,
    VocabMismatch,
)
from .evaluate import (
    MetricsReport,
    align_topics,
    dominant_accuracy,
    empirical_kl,
    full_report,
    group_accuracy,
    perplexity,
    umass_coherence,
)
from .inference import (
    TrainConfig,
    default_init,
    encode_corpus,
    fit_dynamic_topics,
    infer_proportions,
    load_model,
    longitudinal_loss,
    save_model,
    train,
)
from .model import (
    GenerativeParams,
    TransitionModel,
    collapsed_word_distribution,
    column_softmax,
    forward_sample,
    multinomial_log_likelihood,
    softmax,
    transition_mean,
)
from .simulate import GroundTruth, SimConfig, load_truth, save_truth, simulate

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Corpus",
    "DegenerateDesign",
    "DivergedError",
    "DuplicateDocument",
    "FormatError",
    "GenerativeParams",
    "GroundTruth",
    "IoError",
    "LongtopicError",
    "MetricsReport",
    "MissingDocument",
    "MissingLabel",
    "NumericError",
    "ShapeError",
    "SimConfig",
    "TooManyTopics",
    "TrainConfig",
    "TransitionModel",
    "UnknownDistance",
    "VocabMismatch",
    "align_topics",
    "collapsed_word_distribution",
    "column_softmax",
    "default_init",
    "dominant_accuracy",
    "empirical_kl",
    "encode_corpus",
    "fit_dynamic_topics",
    "forward_sample",
    "full_report",
    "group_accuracy",
    "infer_proportions",
    "load_corpus",
    "load_model",
    "load_truth",
    "longitudinal_loss",
    "multinomial_log_likelihood",
    "perplexity",
    "save_corpus",
    "save_model",
    "save_truth",
    "simulate",
    "softmax",
    "train",
    "transition_mean",
    "umass_coherence",
]

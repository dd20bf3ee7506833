"""Log-bilinear language models with additive morphological word vectors.

The package covers the full pipeline: corpus ingestion and vocabulary
pruning, word factorization from morphological segmentations, word
classing (exchange clustering or frequency binning), model training
(exact maximum likelihood for class-factored models, noise-contrastive
estimation for flat ones), perplexity evaluation with diagnostic
breakdowns, and word-similarity scoring with out-of-vocabulary vector
composition.
"""

__version__ = "0.1.0"

from .corpus import UNK_ID, PAD_ID, Vocabulary, build_vocabulary, extract_ngrams, normalize_token
from .morphology import (
    FactorVocabulary,
    WordFactorization,
    PostHocMap,
    build_factorization,
    identity_factorization,
    compose_vector,
    compile_word_table,
    oov_vector,
    parse_segmentations,
)
from .clustering import ClassPartition, brown_cluster, default_num_classes, frequency_bin
from .model import LanguageModel, ModelConfig, ModelParameters, NormalizerCache, Querier
from .container import load_model, save_model
from .training import TrainingConfig, adagrad_step, init_params, minibatch_loss_and_grad, nce_loss_and_grad, train
from . import evaluation

__all__ = [
    "UNK_ID",
    "PAD_ID",
    "Vocabulary",
    "build_vocabulary",
    "extract_ngrams",
    "normalize_token",
    "FactorVocabulary",
    "WordFactorization",
    "PostHocMap",
    "build_factorization",
    "identity_factorization",
    "compose_vector",
    "compile_word_table",
    "oov_vector",
    "parse_segmentations",
    "ClassPartition",
    "brown_cluster",
    "default_num_classes",
    "frequency_bin",
    "LanguageModel",
    "ModelConfig",
    "ModelParameters",
    "NormalizerCache",
    "Querier",
    "load_model",
    "save_model",
    "TrainingConfig",
    "adagrad_step",
    "init_params",
    "minibatch_loss_and_grad",
    "nce_loss_and_grad",
    "train",
    "evaluation",
]

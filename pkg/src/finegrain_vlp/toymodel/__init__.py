"""Desk-scale micro-world, encoders, training loop and evaluation."""

from .corpus import ToyScene, build_toy_vocab, generate_toy_corpus, noisy_caption, world_words
from .model import ModelConfig, PairEncoding, ToyEncoders, encode_pair, new_model
from .train import (
    TrainConfig,
    TrainResult,
    build_batch,
    compute_losses,
    eval_retrieval,
    eval_rlm,
    load_checkpoint,
    recall_then_rerank,
    rlm_accuracy,
    save_checkpoint,
    train_run,
)

__all__ = [
    "ToyScene",
    "build_toy_vocab",
    "generate_toy_corpus",
    "noisy_caption",
    "world_words",
    "ModelConfig",
    "PairEncoding",
    "ToyEncoders",
    "encode_pair",
    "new_model",
    "TrainConfig",
    "TrainResult",
    "build_batch",
    "compute_losses",
    "eval_retrieval",
    "eval_rlm",
    "load_checkpoint",
    "recall_then_rerank",
    "rlm_accuracy",
    "save_checkpoint",
    "train_run",
]

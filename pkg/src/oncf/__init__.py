"""Outer-product neural collaborative filtering (ONCF / ConvNCF) in numpy."""

from .data import InteractionDataset, leave_latest_out, load_triples, synthesize
from .evaluation import MetricsHistory, evaluate
from .models import Model, ModelConfig, init_model
from .ops import ConvLayerParams, EmbeddingTable
from .training import TrainConfig, fit, pretrain_embeddings

__all__ = [
    "ConvLayerParams",
    "EmbeddingTable",
    "InteractionDataset",
    "MetricsHistory",
    "Model",
    "ModelConfig",
    "TrainConfig",
    "evaluate",
    "fit",
    "init_model",
    "leave_latest_out",
    "load_triples",
    "pretrain_embeddings",
    "synthesize",
]

__version__ = "0.1.0"

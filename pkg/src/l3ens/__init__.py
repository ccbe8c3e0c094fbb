"""Lifelong-learning ensemble experiments over frozen embeddings."""

__version__ = "0.1.0"

from .data import Example, TaskDataset, load_jsonl, make_dataset
from .embedding_store import (
    EmbeddingManifest,
    EmbeddingMatrix,
    align,
    hash_encode,
    load_embeddings,
    store_embeddings,
    unit_rows,
)
from .heads import Head, Metric, TrainConfig, evaluate, init_head, load_head, save_head, train_head
from .continual import EvalMatrix, TaskSequence, detect_forgetting, knowledge_transfer, run_sequence
from .ensemble import (
    EnsembleSpec,
    EnsembleWeights,
    build_fused_representation,
    fit_weights,
    naive_combine,
    project_simplex,
    weighted_combine,
)
from .knowledge import KnowledgeBase, build_knowledge_base, knowledge_vector, link_entities, load_kb
from .config import ExperimentConfig, validate_config, validate_config_data
from .engine import run_experiment

__all__ = [
    "__version__",
    "Example",
    "TaskDataset",
    "load_jsonl",
    "make_dataset",
    "EmbeddingManifest",
    "EmbeddingMatrix",
    "align",
    "hash_encode",
    "load_embeddings",
    "store_embeddings",
    "unit_rows",
    "Head",
    "Metric",
    "TrainConfig",
    "evaluate",
    "init_head",
    "load_head",
    "save_head",
    "train_head",
    "EvalMatrix",
    "TaskSequence",
    "detect_forgetting",
    "knowledge_transfer",
    "run_sequence",
    "EnsembleSpec",
    "EnsembleWeights",
    "build_fused_representation",
    "fit_weights",
    "naive_combine",
    "project_simplex",
    "weighted_combine",
    "KnowledgeBase",
    "build_knowledge_base",
    "knowledge_vector",
    "link_entities",
    "load_kb",
    "ExperimentConfig",
    "validate_config",
    "validate_config_data",
    "run_experiment",
]

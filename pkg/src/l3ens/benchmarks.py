"""Bundled synthetic benchmarks and the demo experiment bundle.

Three constructions, all seeded and offline:
  orthogonal_tasks     two binary tasks with perpendicular decision axes;
                       a shared head trained on the second forgets the first
  text_similarity_task word-overlap pairs with a Jaccard label, the
                       STS-style regression playground for ensembles
  knowledge_task       labels planted as a linear function of the pooled
                       knowledge vector, so knowledge infusion has signal

write_demo() materializes all of it plus a ready-to-run config file.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .data import Example, TaskDataset, make_dataset
from .embedding_store import EmbeddingMatrix, store_embeddings
from .knowledge import EntityRecord

logger = logging.getLogger(__name__)

_FILLERS = ("alpha", "beta", "gamma", "delta", "report", "links", "with", "study", "notes", "finds")


def orthogonal_tasks(
    seed: int = 0,
    n_per_task: int = 240,
    dim: int = 16,
    separation: float = 1.2,
    noise: float = 0.25,
) -> tuple[TaskDataset, TaskDataset, EmbeddingMatrix]:
    """Two binary tasks whose class signals live on perpendicular axes.

    Task A separates along axis 0, task B along axis 1; everything else is
    isotropic noise, so nothing about task B's labels constrains axis 0.
    """
    rng = np.random.default_rng(seed)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    tasks = []
    for axis, prefix in ((0, "A"), (1, "B")):
        examples = []
        for i in range(n_per_task):
            label = i % 2
            x = noise * rng.standard_normal(dim)
            x[axis] += (2 * label - 1) * separation
            ex_id = f"{prefix}{i:04d}"
            ids.append(ex_id)
            rows.append(x)
            examples.append(Example(id=ex_id, text="", label=float(label)))
        tasks.append(
            make_dataset(
                name=f"task{prefix}",
                task_kind="classification",
                examples=examples,
                num_classes=2,
                split_seed=seed + (11 if prefix == "A" else 12),
            )
        )
    matrix = EmbeddingMatrix(
        source_name="orth", dim=dim, ids=tuple(ids), rows=np.asarray(rows, dtype=np.float32)
    )
    return tasks[0], tasks[1], matrix


def forgetting_train_overrides() -> dict:
    """Settings under which the shared-head run actually forgets.

    Weight decay is the mechanism: while task 2 trains, the penalty erodes
    the stale task-1 direction that task 2's gradients never refresh.
    """
    return {
        "learning_rate": 0.05,
        "optimizer": "adam",
        "batch_size": 16,
        "max_epochs": 50,
        "early_stop_patience": 50,
        "l2_penalty": 0.02,
    }


def text_similarity_task(seed: int = 0, n_pairs: int = 400, vocab_size: int = 60) -> TaskDataset:
    """Sentence pairs with a word-overlap (Jaccard) similarity label in [0,1]."""
    rng = np.random.default_rng(seed)
    vocab = np.array([f"w{i:02d}" for i in range(vocab_size)])
    examples = []
    for i in range(n_pairs):
        n_shared = int(rng.integers(0, 7))
        n_a = int(rng.integers(2, 7))
        n_b = int(rng.integers(2, 7))
        words = rng.choice(vocab, size=n_shared + n_a + n_b, replace=False)
        shared = list(words[:n_shared])
        side_a = shared + list(words[n_shared : n_shared + n_a])
        side_b = shared + list(words[n_shared + n_a :])
        text_a = " ".join(np.array(side_a)[rng.permutation(len(side_a))])
        text_b = " ".join(np.array(side_b)[rng.permutation(len(side_b))])
        label = n_shared / (n_shared + n_a + n_b)
        examples.append(Example(id=f"sim{i:04d}", text=text_a + "\n" + text_b, label=float(label)))
    return make_dataset("sim", "regression", examples, split_seed=seed + 13)


def auxiliary_embeddings(dataset: TaskDataset, seed: int, dim: int = 8, noise: float = 0.05) -> EmbeddingMatrix:
    """Stand-in for a stronger frozen encoder: one nearly-label channel plus noise."""
    rng = np.random.default_rng(seed)
    ids = dataset.ids()
    labels = {ex.id: ex.label for ex in dataset.examples}
    rows = rng.standard_normal((len(ids), dim)) * 0.3
    for i, ex_id in enumerate(ids):
        rows[i, 0] = labels[ex_id] + noise * rng.standard_normal()
        rows[i, 1] = 1.0  # constant channel keeps row norms comparable
    return EmbeddingMatrix(source_name="aux", dim=dim, ids=tuple(ids), rows=rows.astype(np.float32))


def knowledge_task(
    seed: int = 0,
    n_examples: int = 400,
    n_entities: int = 50,
    kb_dim: int = 16,
    filler_rate: float = 0.05,
) -> tuple[TaskDataset, list[EntityRecord], EmbeddingMatrix]:
    """Regression task whose label is linear in the pooled knowledge vector.

    Each text mentions 1 to 3 entities by canonical label or alias; the
    label is 0.5 + 0.45 * (t . unit(mean of mentioned entity vectors)),
    lightly noised, for a fixed direction t. A small share of texts
    mentions nothing, exercising the zero-coverage path.
    """
    rng = np.random.default_rng(seed)
    entries = [
        EntityRecord(id=f"E{i:02d}", label=f"node {i:02d}", aliases=(f"n{i:02d}",))
        for i in range(n_entities)
    ]
    vectors = rng.standard_normal((n_entities, kb_dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    kb_matrix = EmbeddingMatrix(
        source_name="toykb",
        dim=kb_dim,
        ids=tuple(e.id for e in entries),
        rows=vectors.astype(np.float32),
    )
    target = rng.standard_normal(kb_dim)
    target /= np.linalg.norm(target)

    examples = []
    for i in range(n_examples):
        fillers = list(rng.choice(_FILLERS, size=int(rng.integers(2, 5)), replace=False))
        if rng.random() < filler_rate:
            text = " ".join(fillers)
            label = 0.5
        else:
            k = int(rng.integers(1, 4))
            picks = rng.choice(n_entities, size=k, replace=False)
            phrases = []
            for e in picks:
                entry = entries[int(e)]
                phrases.append(entry.label if rng.random() < 0.5 else entry.aliases[0])
            parts = fillers[:1] + [phrases[0]]
            for phrase in phrases[1:]:
                parts.append(str(rng.choice(_FILLERS)))
                parts.append(phrase)
            parts.extend(fillers[1:])
            text = " ".join(parts)
            pooled = np.asarray(vectors[picks], dtype=np.float64).mean(axis=0)
            pooled /= np.linalg.norm(pooled)
            label = 0.5 + 0.45 * float(target @ pooled)
        label = float(np.clip(label + 0.02 * rng.standard_normal(), 0.0, 1.0))
        examples.append(Example(id=f"kg{i:04d}", text=text, label=label))
    dataset = make_dataset("kgsim", "regression", examples, split_seed=seed + 14)
    return dataset, entries, kb_matrix


def write_kb_files(entries: list[EntityRecord], vectors: EmbeddingMatrix, labels_path: Path, vectors_path: Path) -> None:
    labels_path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for e in entries:
        lines.append(f"{e.id}\t{e.label}\t{'|'.join(e.aliases)}")
    labels_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    store_embeddings(vectors, vectors_path, dataset_name="knowledge_base")


def _write_pairs_jsonl(dataset: TaskDataset, path: Path) -> None:
    # sim examples store both sides in one text field separated by a newline;
    # on disk they become the two-field pair form.
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            a, _, b = ex.text.partition("\n")
            fh.write(json.dumps({"id": ex.id, "text_a": a, "text_b": b, "label": ex.label}) + "\n")


def _write_jsonl(dataset: TaskDataset, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(json.dumps({"id": ex.id, "text": ex.text, "label": ex.label}) + "\n")


def demo_config(seed: int = 7) -> dict:
    train = {
        "learning_rate": 0.02,
        "optimizer": "adam",
        "batch_size": 32,
        "max_epochs": 35,
        "early_stop_patience": 6,
    }
    fresh_overrides = dict(forgetting_train_overrides())
    fresh_overrides.pop("l2_penalty")
    return {
        "experiment_id": "demo",
        "seed": seed,
        "output_dir": "results",
        "train": train,
        "datasets": [
            {"name": "taskA", "task_kind": "classification", "num_classes": 2, "path": "data/taskA.jsonl", "split_seed": seed + 11},
            {"name": "taskB", "task_kind": "classification", "num_classes": 2, "path": "data/taskB.jsonl", "split_seed": seed + 12},
            {"name": "sim", "task_kind": "regression", "path": "data/sim.jsonl", "split_seed": seed + 13},
            {"name": "kgsim", "task_kind": "regression", "path": "data/kgsim.jsonl", "split_seed": seed + 14},
        ],
        "sources": [
            {"name": "orth", "kind": "file", "files": {"taskA": "emb/orth.l3em", "taskB": "emb/orth.l3em"}},
            {"name": "hash-a", "kind": "hash", "dim": 256, "hash_seed": 1},
            {"name": "hash-b", "kind": "hash", "dim": 256, "hash_seed": 2},
            {"name": "sim-aux", "kind": "file", "files": {"sim": "emb/sim_aux.l3em"}},
        ],
        "knowledge_bases": [{"name": "toy", "labels": "kb/toy_labels.tsv", "vectors": "kb/toy_vectors.l3em"}],
        "sequences": [
            {
                "name": "orth_shared",
                "tasks": ["taskA", "taskB"],
                "shared_head": True,
                "head_kind": "linear",
                "source": "orth",
                "train": forgetting_train_overrides(),
            },
            {
                "name": "orth_fresh",
                "tasks": ["taskA", "taskB"],
                "shared_head": False,
                "head_kind": "linear",
                "source": "orth",
                "train": fresh_overrides,
            },
        ],
        "ensembles": [
            {"name": "sim_naive", "strategy": "naive", "task": "sim", "members": ["hash-a", "hash-b"]},
            {"name": "sim_weighted", "strategy": "weighted", "task": "sim", "members": ["hash-a", "hash-b"]},
            {"name": "sim_llm", "strategy": "llm", "task": "sim", "members": ["hash-a", "hash-b"], "auxiliary_source": "sim-aux"},
            {"name": "kg_naive", "strategy": "naive", "task": "kgsim", "members": ["hash-a", "hash-b"]},
            {"name": "kg_weighted", "strategy": "weighted", "task": "kgsim", "members": ["hash-a", "hash-b"]},
            {"name": "kg_ki", "strategy": "ki", "task": "kgsim", "members": ["hash-a", "hash-b"], "knowledge_base": "toy"},
        ],
    }


def write_demo(target_dir: str | Path, seed: int = 7) -> Path:
    """Materialize datasets, embeddings, the toy KB, and demo_config.json."""
    target = Path(target_dir)
    task_a, task_b, orth = orthogonal_tasks(seed)
    sim = text_similarity_task(seed)
    kg, entries, kb_vectors = knowledge_task(seed)

    _write_jsonl(task_a, target / "data" / "taskA.jsonl")
    _write_jsonl(task_b, target / "data" / "taskB.jsonl")
    _write_pairs_jsonl(sim, target / "data" / "sim.jsonl")
    _write_jsonl(kg, target / "data" / "kgsim.jsonl")
    store_embeddings(orth, target / "emb" / "orth.l3em", dataset_name="orthogonal_pair")
    store_embeddings(auxiliary_embeddings(sim, seed + 99), target / "emb" / "sim_aux.l3em", dataset_name="sim")
    write_kb_files(entries, kb_vectors, target / "kb" / "toy_labels.tsv", target / "kb" / "toy_vectors.l3em")

    config_path = target / "demo_config.json"
    config_path.write_text(json.dumps(demo_config(seed), indent=2) + "\n", encoding="utf-8")
    logger.info("demo bundle written to %s", target)
    return config_path

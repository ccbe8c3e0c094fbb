"""Sequential-task protocol: train in order, evaluate everything at every step.

The evaluation grid has one row per training step (row 0 is the untrained
model) and one column per task; knowledge transfer compares cells of that
grid, and forgetting is negative transfer on a previously trained task.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import heads as H
from .data import CLASSIFICATION, TaskDataset
from .embedding_store import EmbeddingMatrix, align, unit_rows
from .errors import MetricKindMismatch, SharedHeadShapeMismatch
from .heads import Head, Metric, TrainConfig, TrainHistory

logger = logging.getLogger(__name__)

FORGETTING_EPS = 1e-9


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed for a named component of a run."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8, key=(seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little")


@dataclass
class TaskSequence:
    name: str
    tasks: list[str]
    shared_head: bool = True
    head_kind: str = H.LINEAR
    hidden_dim: int = 32

    def validate(self) -> None:
        if not self.tasks:
            raise ValueError("a sequence needs at least one task")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("sequence tasks must be distinct")
        if self.head_kind not in (H.LINEAR, H.MLP1):
            raise ValueError(f"unknown head kind '{self.head_kind}'")


@dataclass
class EvalMatrix:
    """rows[k][j] = metric on task j after k training steps (row 0 untrained)."""

    tasks: list[str]
    kinds: list[str]
    rows: list[list[Metric]]

    def cell(self, step: int, task: int | str) -> Metric:
        j = self.tasks.index(task) if isinstance(task, str) else task
        return self.rows[step][j]

    def to_lists(self) -> list[list[float]]:
        return [[m.value for m in row] for row in self.rows]


@dataclass(frozen=True)
class TransferRecord:
    step: int
    model: str
    task: str
    a: float
    cb: float
    kt: float
    relation: str  # learned | forward | forgetting
    is_forgetting: bool

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "model": self.model,
            "task": self.task,
            "A": self.a,
            "CB": self.cb,
            "kt": self.kt,
            "relation": self.relation,
            "is_forgetting": self.is_forgetting,
        }


@dataclass
class SequenceResult:
    sequence: TaskSequence
    matrix: EvalMatrix
    transfers: list[TransferRecord]
    histories: list[TrainHistory]


def knowledge_transfer(a: Metric, cb: Metric) -> float:
    """KT = A - CB over accuracy metrics; other kinds have no sign convention."""
    if a.kind != H.ACCURACY or cb.kind != H.ACCURACY:
        raise MetricKindMismatch(f"knowledge transfer needs accuracy metrics, got {a.kind}/{cb.kind}")
    return a.value - cb.value


def _out_dim(dataset: TaskDataset) -> int:
    return dataset.num_classes if dataset.task_kind == CLASSIFICATION else 1


ARROW = " → "  # the figure-style "X → Y" sequence notation


def _model_label(tasks: list[str], step: int) -> str:
    return "base" if step == 0 else ARROW.join(tasks[:step])


class _HeadPool:
    """Owns the model(s) for one sequence run, shared or per-task."""

    def __init__(self, seq: TaskSequence, datasets: list[TaskDataset], dims: list[int], seed: int):
        self.seq = seq
        self.datasets = datasets
        self.shared_trunk: dict[str, np.ndarray] | None = None
        self.outputs: dict[int, dict[str, np.ndarray]] = {}
        self.pool: dict[int, Head] = {}
        if seq.shared_head:
            if len(set(dims)) != 1:
                raise SharedHeadShapeMismatch(f"shared head needs one embedding dim, got {sorted(set(dims))}")
            dim = dims[0]
            if seq.head_kind == H.LINEAR:
                kinds = {d.task_kind for d in datasets}
                outs = {_out_dim(d) for d in datasets}
                if len(kinds) != 1 or len(outs) != 1:
                    raise SharedHeadShapeMismatch(
                        f"a shared linear head needs one task kind and output size, got kinds={sorted(kinds)} outs={sorted(outs)}"
                    )
                self.pool[0] = H.init_head(H.LINEAR, dim, outs.pop(), kinds.pop(), seed)
            else:
                # Shared mlp1 trunk with one output layer per task, so tasks
                # of different shapes can still share representation weights.
                trunk = H.init_head(H.MLP1, dim, 1, H.REGRESSION, seed, seq.hidden_dim)
                self.shared_trunk = {"w1": trunk.params["w1"], "b1": trunk.params["b1"]}
                for i, d in enumerate(datasets):
                    out = H.init_head(
                        H.MLP1, dim, _out_dim(d), d.task_kind, derive_seed(seed, f"output:{d.name}"), seq.hidden_dim
                    )
                    self.outputs[i] = {"w2": out.params["w2"], "b2": out.params["b2"]}
        else:
            for i, d in enumerate(datasets):
                self.pool[i] = H.init_head(
                    seq.head_kind, dims[i], _out_dim(d), d.task_kind, derive_seed(seed, f"task:{d.name}"), seq.hidden_dim
                )

    def head_for(self, task_index: int) -> Head:
        if not self.seq.shared_head:
            return self.pool[task_index]
        if self.seq.head_kind == H.LINEAR:
            return self.pool[0]
        d = self.datasets[task_index]
        params = {
            "w1": self.shared_trunk["w1"],
            "b1": self.shared_trunk["b1"],
            "w2": self.outputs[task_index]["w2"],
            "b2": self.outputs[task_index]["b2"],
        }
        return Head(
            kind=H.MLP1,
            task_kind=d.task_kind,
            in_dim=params["w1"].shape[1],
            out_dim=_out_dim(d),
            hidden_dim=self.seq.hidden_dim,
            params=params,
        )

    def absorb(self, task_index: int, trained: Head) -> None:
        if not self.seq.shared_head:
            self.pool[task_index] = trained
        elif self.seq.head_kind == H.LINEAR:
            self.pool[0] = trained
        else:
            self.shared_trunk = {"w1": trained.params["w1"], "b1": trained.params["b1"]}
            self.outputs[task_index] = {"w2": trained.params["w2"], "b2": trained.params["b2"]}


def run_sequence(
    seq: TaskSequence,
    datasets: dict[str, TaskDataset],
    sources: dict[str, EmbeddingMatrix],
    config: TrainConfig,
) -> SequenceResult:
    """Train tasks in order and fill the (steps+1) x tasks evaluation grid.

    `sources` maps each task name to its frozen embedding matrix. Embedding
    rows are L2-normalized before use so file-backed and encoder-backed
    sources behave the same.
    """
    seq.validate()
    ordered = [datasets[name] for name in seq.tasks]
    views: list[dict[str, tuple[np.ndarray, np.ndarray]]] = []
    dims: list[int] = []
    for d in ordered:
        matrix = sources[d.name]
        dims.append(matrix.dim)
        per_split = {}
        for split in ("train", "validation", "test"):
            view = align(d, matrix, split)
            per_split[split] = (unit_rows(view.rows), view.labels)
        views.append(per_split)

    pool = _HeadPool(seq, ordered, dims, config.seed)

    def evaluate_all() -> list[Metric]:
        return [H.evaluate(pool.head_for(j), *views[j]["test"]) for j in range(len(ordered))]

    rows = [evaluate_all()]
    histories: list[TrainHistory] = []
    for k, d in enumerate(ordered):
        trained, history = H.train_head(pool.head_for(k), views[k]["train"], views[k]["validation"], config)
        pool.absorb(k, trained)
        histories.append(history)
        rows.append(evaluate_all())

    matrix = EvalMatrix(tasks=[d.name for d in ordered], kinds=[rows[0][j].kind for j in range(len(ordered))], rows=rows)
    transfers = transfer_records(matrix)
    return SequenceResult(sequence=seq, matrix=matrix, transfers=transfers, histories=histories)


def transfer_records(matrix: EvalMatrix) -> list[TransferRecord]:
    """Every (step, task) comparison with its baseline.

    After training step k (which taught the task in column k-1):
      learned     j == k-1: baseline is the previous step's cell for j
      forward     j >  k-1: baseline is the untrained row for j
      forgetting  j <  k-1: baseline is the cell right after task j was learned
    Only accuracy columns participate; error metrics have no A - CB reading.
    """
    records: list[TransferRecord] = []
    n_tasks = len(matrix.tasks)
    for k in range(1, len(matrix.rows)):
        model = _model_label(matrix.tasks, k)
        for j in range(n_tasks):
            if matrix.kinds[j] != H.ACCURACY:
                continue
            a = matrix.cell(k, j)
            if j == k - 1:
                relation, cb = "learned", matrix.cell(k - 1, j)
            elif j > k - 1:
                relation, cb = "forward", matrix.cell(0, j)
            else:
                relation, cb = "forgetting", matrix.cell(j + 1, j)
            kt = knowledge_transfer(a, cb)
            records.append(
                TransferRecord(
                    step=k,
                    model=model,
                    task=matrix.tasks[j],
                    a=a.value,
                    cb=cb.value,
                    kt=kt,
                    relation=relation,
                    is_forgetting=relation == "forgetting" and kt < -FORGETTING_EPS,
                )
            )
    return records


def detect_forgetting(matrix: EvalMatrix) -> list[TransferRecord]:
    """The forgetting-relation subset of transfer_records (flag says which bite)."""
    return [r for r in transfer_records(matrix) if r.relation == "forgetting"]


def sequence_to_json(result: SequenceResult) -> dict:
    """Stable JSON shape for a finished sequence run."""
    kinds = result.matrix.kinds
    return {
        "sequence": list(result.matrix.tasks),
        "metric_kind": kinds[0] if len(set(kinds)) == 1 else list(kinds),
        "rows": result.matrix.to_lists(),
        "transfers": [r.to_dict() for r in result.transfers],
    }

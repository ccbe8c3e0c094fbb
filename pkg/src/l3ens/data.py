"""Task datasets: JSONL loading, label scaling, and deterministic splits."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"

SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    label: float


@dataclass
class TaskDataset:
    name: str
    task_kind: str
    examples: list[Example]
    splits: dict[str, list[str]]
    num_classes: int | None = None

    def __post_init__(self):
        self._by_id: dict[str, Example] | None = None

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def by_id(self) -> dict[str, Example]:
        if self._by_id is None:
            self._by_id = {ex.id: ex for ex in self.examples}
        return self._by_id

    def split_ids(self, split: str) -> list[str]:
        if split not in self.splits:
            raise KeyError(f"dataset '{self.name}' has no split '{split}'")
        return list(self.splits[split])

    def texts_for(self, ids: list[str]) -> list[str]:
        table = self.by_id()
        return [table[eid].text for eid in ids]

    def labels_for(self, ids: list[str]) -> np.ndarray:
        table = self.by_id()
        values = [table[eid].label for eid in ids]
        if self.task_kind == CLASSIFICATION:
            return np.asarray(values, dtype=np.int64)
        return np.asarray(values, dtype=np.float64)

    def validate(self) -> None:
        if self.task_kind not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task_kind '{self.task_kind}'")
        if not self.examples:
            raise ValueError(f"dataset '{self.name}' has no examples")
        ids = self.ids()
        if len(set(ids)) != len(ids):
            raise ValueError(f"dataset '{self.name}' has duplicate example ids")
        known = set(ids)
        seen: set[str] = set()
        for split, members in self.splits.items():
            for eid in members:
                if eid not in known:
                    raise ValueError(f"split '{split}' references unknown id '{eid}'")
                if eid in seen:
                    raise ValueError(f"id '{eid}' appears in more than one split")
                seen.add(eid)
        if self.task_kind == CLASSIFICATION:
            if not self.num_classes or self.num_classes < 2:
                raise ValueError(f"classification dataset '{self.name}' needs num_classes >= 2")
            for ex in self.examples:
                if ex.label != int(ex.label) or not (0 <= int(ex.label) < self.num_classes):
                    raise ValueError(f"example '{ex.id}' label {ex.label} outside 0..{self.num_classes - 1}")
        else:
            for ex in self.examples:
                if not (0.0 <= ex.label <= 1.0):
                    raise ValueError(f"example '{ex.id}' label {ex.label} outside [0, 1]")


def load_jsonl(path: str | Path) -> list[Example]:
    """One JSON object per line: id, label, and either text or text_a/text_b."""
    examples: list[Example] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "id" not in record or "label" not in record:
                raise ValueError(f"{path}:{lineno}: record needs 'id' and 'label'")
            if "text" in record:
                text = str(record["text"])
            elif "text_a" in record and "text_b" in record:
                text = str(record["text_a"]) + "\n" + str(record["text_b"])
            else:
                raise ValueError(f"{path}:{lineno}: record needs 'text' or 'text_a'+'text_b'")
            examples.append(Example(id=str(record["id"]), text=text, label=float(record["label"])))
    return examples


def split_examples(
    ids: list[str],
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> dict[str, list[str]]:
    """Shuffle ids with a seeded generator and cut train/validation/test."""
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return {
        "train": order[:n_train],
        "validation": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }


def make_dataset(
    name: str,
    task_kind: str,
    examples: list[Example],
    num_classes: int | None = None,
    label_scale: float = 1.0,
    splits: dict[str, list[str]] | None = None,
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    split_seed: int = 0,
) -> TaskDataset:
    """Assemble and validate a dataset; label_scale divides regression labels."""
    if label_scale != 1.0:
        if task_kind == CLASSIFICATION:
            raise ValueError("label_scale applies to regression datasets only")
        examples = [Example(id=ex.id, text=ex.text, label=ex.label / label_scale) for ex in examples]
    if splits is None:
        splits = split_examples([ex.id for ex in examples], split_fractions, split_seed)
    ds = TaskDataset(name=name, task_kind=task_kind, examples=examples, splits=splits, num_classes=num_classes)
    ds.validate()
    return ds


def write_jsonl(examples: list[Example], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"id": ex.id, "text": ex.text, "label": ex.label}) + "\n")

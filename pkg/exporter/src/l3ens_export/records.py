"""Input corpus reading.

The input is JSON Lines with one object per line: an ``id`` plus either a
single ``text`` field or a ``text_a``/``text_b`` sentence pair. A ``label``
field may be present (the experiment engine's datasets carry one) and is
ignored here; exporting does not need supervision.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError


@dataclass(frozen=True)
class Record:
    id: str
    text: str
    text_pair: str | None = None

    def as_single_text(self) -> str:
        # same pair join the engine uses when it flattens pairs for hashing
        if self.text_pair is None:
            return self.text
        return self.text + "\n" + self.text_pair


def read_records(path: str | Path) -> list[Record]:
    """Parse the corpus, preserving order; duplicate ids are rejected
    because the output manifest requires unique row ids."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset '{path}': {exc}") from exc

    records: list[Record] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict) or "id" not in obj:
            raise DatasetError(f"{path}:{lineno}: record needs an 'id'")
        rid = str(obj["id"])
        if rid in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate id '{rid}'")
        seen.add(rid)
        if "text" in obj:
            records.append(Record(id=rid, text=str(obj["text"])))
        elif "text_a" in obj and "text_b" in obj:
            records.append(Record(id=rid, text=str(obj["text_a"]), text_pair=str(obj["text_b"])))
        else:
            raise DatasetError(f"{path}:{lineno}: record needs 'text' or 'text_a'+'text_b'")
    return records

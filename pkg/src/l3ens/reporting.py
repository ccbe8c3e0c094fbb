"""Render run results into tables and plot data.

Everything here formats numbers that already exist in a run result;
nothing is recomputed, so emitting twice is byte-identical and every
table value can be traced back to a stored one.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from pathlib import Path

from .errors import MissingField

logger = logging.getLogger(__name__)

ARROW = " → "

TRANSFER_HEADER = (
    "Step",
    "FineTuned Model",
    "Evaluation Task",
    "Accuracy (A)",
    "Comparison Baseline (CB)",
    "Knowledge Transfer (A-CB)",
)

STRATEGY_HEADER = (
    "Ensemble",
    "Size",
    "Naïve",
    "Weighted",
    "LLM",
    "KI",
    "LLM Fusion Size",
    "KI Fusion Size",
)

_STRATEGY_COLUMNS = ("naive", "weighted", "llm", "ki")


def format_percent(value: float) -> str:
    return f"{value * 100.0:.1f}%"


def format_kt_cell(kt: float, is_forgetting: bool) -> str:
    """Signed transfer cell; forgetting rows read as a forgetting amount."""
    if kt > 0.0:
        return f"{kt * 100.0:.1f}% (+)"
    if kt < 0.0:
        if is_forgetting:
            return f"CF: {abs(kt) * 100.0:.1f}% (-)"
        return f"{kt * 100.0:.1f}% (-)"
    return format_percent(0.0)


def _field(record: dict, key: str):
    if key not in record:
        raise MissingField(f"transfer record lacks '{key}': {sorted(record)}")
    return record[key]


def transfer_rows(records: list[dict]) -> list[list[str]]:
    rows = []
    for r in records:
        rows.append(
            [
                str(_field(r, "step")),
                str(_field(r, "model")),
                str(_field(r, "task")),
                format_percent(_field(r, "A")),
                format_percent(_field(r, "CB")),
                format_kt_cell(_field(r, "kt"), bool(r.get("is_forgetting", False))),
            ]
        )
    return rows


def _format_metric(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def strategy_rows(groups: list[dict], bold: bool = False) -> tuple[list[list[str]], list[str]]:
    """One row per ensemble group; the best strategy is bolded in markdown mode.

    Best means minimum for error metrics and maximum for accuracy. Ties
    keep the leftmost column bold and add a footnote.
    """
    rows: list[list[str]] = []
    footnotes: list[str] = []
    for g in groups:
        metrics: dict[str, float | None] = _field(g, "metrics")
        cells = {col: _format_metric(metrics.get(col)) for col in _STRATEGY_COLUMNS}
        present = [(col, metrics[col]) for col in _STRATEGY_COLUMNS if metrics.get(col) is not None]
        if bold and len(present) > 1:
            prefer_max = g.get("metric_kind") == "accuracy"
            best_value = max(v for _, v in present) if prefer_max else min(v for _, v in present)
            winners = [col for col, v in present if v == best_value]
            cells[winners[0]] = f"**{cells[winners[0]]}**"
            if len(winners) > 1:
                footnotes.append(f"{g['name']}: tie between {', '.join(winners)}; leftmost bolded")
        rows.append(
            [
                str(_field(g, "name")),
                str(g.get("member_param_total", "")),
                cells["naive"],
                cells["weighted"],
                cells["llm"],
                cells["ki"],
                "" if g.get("llm_fusion_params") is None else str(g["llm_fusion_params"]),
                "" if g.get("ki_fusion_params") is None else str(g["ki_fusion_params"]),
            ]
        )
    return rows, footnotes


def write_csv(header: tuple[str, ...], rows: list[list[str]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_markdown_table(
    header: tuple[str, ...],
    rows: list[list[str]],
    path: str | Path,
    footnotes: tuple[str, ...] | list[str] = (),
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["| " + " | ".join(header) + " |", "| " + " | ".join("---" for _ in header) + " |"]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    for note in footnotes:
        lines.append("")
        lines.append(f"*{note}*")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def emit_transfer_table(records: list[dict], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    rows = transfer_rows(records)
    return (
        write_csv(TRANSFER_HEADER, rows, out_dir / "transfer_table.csv"),
        write_markdown_table(TRANSFER_HEADER, rows, out_dir / "transfer_table.md"),
    )


def emit_strategy_table(groups: list[dict], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_rows, _ = strategy_rows(groups, bold=False)
    md_rows, footnotes = strategy_rows(groups, bold=True)
    return (
        write_csv(STRATEGY_HEADER, csv_rows, out_dir / "strategy_table.csv"),
        write_markdown_table(STRATEGY_HEADER, md_rows, out_dir / "strategy_table.md", footnotes),
    )


def _kinds_list(seq: dict) -> list[str]:
    kind = seq["metric_kind"]
    tasks = seq["sequence"]
    return list(kind) if isinstance(kind, list) else [kind] * len(tasks)


def plot_payload(sequences: dict) -> dict:
    """Per-sequence line-series data: one series per task over training steps.

    Step labels follow the figure convention, e.g. "taskA → taskB".
    """
    payload: dict = {"sequences": {}}
    for name, seq in sequences.items():
        tasks = seq["sequence"]
        rows = seq["rows"]
        step_labels = ["base"] + [ARROW.join(tasks[: k + 1]) for k in range(len(rows) - 1)]
        payload["sequences"][name] = {
            "tasks": tasks,
            "metric_kinds": _kinds_list(seq),
            "steps": list(range(len(rows))),
            "step_labels": step_labels,
            "series": {task: [row[j] for row in rows] for j, task in enumerate(tasks)},
        }
    return payload


def emit_plot_data(sequences: dict, path: str | Path) -> Path:
    return write_json_atomic(plot_payload(sequences), path)


def write_json_atomic(data: dict, path: str | Path) -> Path:
    """Write JSON via a temp file and rename so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def strip_wall_clock(run: dict) -> dict:
    """Copy of a run result without timing, for byte-level comparisons."""
    out = dict(run)
    out.pop("wall_clock", None)
    return out

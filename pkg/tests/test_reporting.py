"""Table rendering, plot payloads, and atomic JSON output."""
import csv
import json

import pytest

from l3ens.errors import MissingField
from l3ens.reporting import (
    STRATEGY_HEADER,
    TRANSFER_HEADER,
    emit_strategy_table,
    emit_transfer_table,
    format_kt_cell,
    format_percent,
    plot_payload,
    strategy_rows,
    strip_wall_clock,
    transfer_rows,
    write_json_atomic,
)


def test_percent_formatting():
    assert format_percent(0.918) == "91.8%"
    assert format_percent(0.0) == "0.0%"
    assert format_percent(1.0) == "100.0%"


def test_kt_cell_formatting():
    assert format_kt_cell(0.288, False) == "28.8% (+)"
    assert format_kt_cell(0.288, True) == "28.8% (+)"
    assert format_kt_cell(-0.069, True) == "CF: 6.9% (-)"
    assert format_kt_cell(-0.289, False) == "-28.9% (-)"
    assert format_kt_cell(0.0, True) == "0.0%"
    assert format_kt_cell(0.0, False) == "0.0%"


def _record(step, model, task, a, cb, kt, forgetting=False):
    return {
        "step": step,
        "model": model,
        "task": task,
        "A": a,
        "CB": cb,
        "kt": kt,
        "is_forgetting": forgetting,
    }


def test_transfer_rows_render_like_the_results_table():
    records = [
        _record(2, "qqp → mrpc", "mrpc", 0.918, 0.63, 0.288),
        _record(2, "qqp → mrpc", "qqp", 0.849, 0.918, -0.069, forgetting=True),
    ]
    rows = transfer_rows(records)
    assert rows[0] == ["2", "qqp → mrpc", "mrpc", "91.8%", "63.0%", "28.8% (+)"]
    assert rows[1] == ["2", "qqp → mrpc", "qqp", "84.9%", "91.8%", "CF: 6.9% (-)"]


def test_transfer_rows_require_all_fields():
    bad = _record(1, "m", "t", 0.5, 0.4, 0.1)
    del bad["CB"]
    with pytest.raises(MissingField):
        transfer_rows([bad])


def _group(name, metrics, metric_kind="mse", **extra):
    g = {"name": name, "metrics": metrics, "metric_kind": metric_kind}
    g.update(extra)
    return g


def test_strategy_rows_bold_minimum_error():
    groups = [_group("g", {"naive": 0.45, "weighted": 0.40, "llm": 0.33, "ki": 0.31})]
    rows, notes = strategy_rows(groups, bold=True)
    assert rows[0][2:6] == ["0.4500", "0.4000", "0.3300", "**0.3100**"]
    assert notes == []


def test_strategy_rows_bold_maximum_accuracy():
    groups = [_group("g", {"naive": 0.81, "weighted": 0.86}, metric_kind="accuracy")]
    rows, _ = strategy_rows(groups, bold=True)
    assert rows[0][2] == "0.8100"
    assert rows[0][3] == "**0.8600**"


def test_strategy_rows_tie_bolds_leftmost_and_footnotes():
    groups = [_group("g", {"naive": 0.4, "weighted": 0.4, "llm": None, "ki": None})]
    rows, notes = strategy_rows(groups, bold=True)
    assert rows[0][2] == "**0.4000**"
    assert rows[0][3] == "0.4000"
    assert len(notes) == 1 and "tie" in notes[0]


def test_strategy_rows_skip_missing_columns_and_sizes():
    groups = [
        _group(
            "g",
            {"naive": 0.4},
            member_param_total=120,
            llm_fusion_params=None,
            ki_fusion_params=257,
        )
    ]
    rows, notes = strategy_rows(groups, bold=True)
    assert rows[0] == ["g", "120", "0.4000", "", "", "", "", "257"]
    assert notes == []  # a single present column never gets bolded


def test_csv_and_markdown_hold_the_same_data(tmp_path):
    records = [_record(1, "a", "a", 1.0, 0.5, 0.5)]
    csv_path, md_path = emit_transfer_table(records, tmp_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == list(TRANSFER_HEADER)
    assert parsed[1] == ["1", "a", "a", "100.0%", "50.0%", "50.0% (+)"]
    md_lines = md_path.read_text(encoding="utf-8").splitlines()
    assert md_lines[0] == "| " + " | ".join(TRANSFER_HEADER) + " |"
    assert set(md_lines[1].strip("| ").split(" | ")) == {"---"}
    assert md_lines[2] == "| 1 | a | a | 100.0% | 50.0% | 50.0% (+) |"


def test_strategy_tables_agree_after_unbolding(tmp_path):
    groups = [
        _group("s", {"naive": 0.45, "weighted": 0.4, "llm": 0.33, "ki": 0.31}, member_param_total=7),
        _group("k", {"naive": 0.2, "weighted": 0.19, "ki": 0.05}, member_param_total=9, ki_fusion_params=33),
    ]
    csv_path, md_path = emit_strategy_table(groups, tmp_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        csv_rows = list(csv.reader(fh))[1:]
    md_body = [
        line.strip("|").split("|")
        for line in md_path.read_text(encoding="utf-8").splitlines()[2:]
        if line.startswith("|")
    ]
    md_rows = [[cell.strip().replace("**", "") for cell in row] for row in md_body]
    assert md_rows == csv_rows
    assert list(csv.reader(open(csv_path, newline="", encoding="utf-8")))[0] == list(STRATEGY_HEADER)


def test_double_emission_is_byte_identical(tmp_path):
    records = [_record(1, "m", "t", 0.7, 0.6, 0.1)]
    a, b = tmp_path / "one", tmp_path / "two"
    for out in (a, b):
        emit_transfer_table(records, out)
    assert (a / "transfer_table.csv").read_bytes() == (b / "transfer_table.csv").read_bytes()
    assert (a / "transfer_table.md").read_bytes() == (b / "transfer_table.md").read_bytes()


def test_plot_payload_step_labels_and_series():
    sequences = {
        "seq": {
            "sequence": ["a", "b"],
            "metric_kind": "accuracy",
            "rows": [[0.5, 0.5], [0.9, 0.5], [0.7, 0.9]],
            "transfers": [],
        }
    }
    payload = plot_payload(sequences)
    seq = payload["sequences"]["seq"]
    assert seq["step_labels"] == ["base", "a", "a → b"]
    assert seq["steps"] == [0, 1, 2]
    assert seq["series"]["a"] == [0.5, 0.9, 0.7]
    assert seq["series"]["b"] == [0.5, 0.5, 0.9]
    assert seq["metric_kinds"] == ["accuracy", "accuracy"]


def test_plot_payload_mixed_metric_kinds():
    sequences = {
        "seq": {
            "sequence": ["a", "b"],
            "metric_kind": ["accuracy", "mse"],
            "rows": [[0.0, 1.0]],
            "transfers": [],
        }
    }
    seq = plot_payload(sequences)["sequences"]["seq"]
    assert seq["metric_kinds"] == ["accuracy", "mse"]


def test_write_json_atomic_format(tmp_path):
    path = tmp_path / "nested" / "out.json"
    write_json_atomic({"b": 1, "a": [1, 2]}, path)
    text = path.read_text(encoding="utf-8")
    assert text == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'
    assert json.loads(text) == {"a": [1, 2], "b": 1}
    leftovers = [p for p in path.parent.iterdir() if p.suffix == ".tmp"]
    assert leftovers == []


def test_write_json_atomic_replaces_existing(tmp_path):
    path = tmp_path / "out.json"
    write_json_atomic({"v": 1}, path)
    write_json_atomic({"v": 2}, path)
    assert json.loads(path.read_text()) == {"v": 2}


def test_strip_wall_clock_copies():
    run = {"status": "ok", "wall_clock": {"total": 1.5}}
    out = strip_wall_clock(run)
    assert out == {"status": "ok"}
    assert run["wall_clock"] == {"total": 1.5}  # original untouched
    assert strip_wall_clock({"status": "ok"}) == {"status": "ok"}

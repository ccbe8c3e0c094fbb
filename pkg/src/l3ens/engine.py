"""Phased experiment runner: models, sequences, ensembles, reports.

The run directory is written incrementally: run.json is rewritten
atomically after every phase, so a failure in phase N leaves phases
1..N-1 on disk with status "failed" and the failing phase named.
"""
from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import heads as H
from .config import EnsembleConfig, ExperimentConfig, SequenceSpec, merged_train
from .continual import TaskSequence, derive_seed, run_sequence, sequence_to_json
from .data import CLASSIFICATION, TaskDataset, load_jsonl, make_dataset
from .embedding_store import EmbeddingMatrix, align, hash_encode, load_embeddings, store_embeddings, unit_rows
from .ensemble import (
    EnsembleSpec,
    build_fused_representation,
    fit_weights,
    naive_combine,
    train_fusion_ensemble,
    weighted_combine,
)
from .errors import L3Error
from .knowledge import KnowledgeBase, knowledge_rows, load_kb
from .reporting import emit_plot_data, emit_strategy_table, emit_transfer_table, write_json_atomic

logger = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


@dataclass
class RunOutcome:
    ok: bool
    run_dir: Path
    run_path: Path
    failed_phase: str | None = None
    error: str | None = None
    run: dict = field(default_factory=dict)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


class Resources:
    """Lazy, cached access to datasets, embedding views, and knowledge bases."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._datasets: dict[str, TaskDataset] = {}
        self._matrices: dict[tuple, EmbeddingMatrix] = {}
        self._kbs: dict[str, KnowledgeBase] = {}

    def dataset(self, name: str) -> TaskDataset:
        if name not in self._datasets:
            spec = self.config.datasets[name]
            if spec.path is not None:
                examples = load_jsonl(self.config.resolve(spec.path))
                splits = None
            else:
                examples = []
                splits = {}
                for split in SPLITS:
                    part = load_jsonl(self.config.resolve(spec.paths[split]))
                    examples.extend(part)
                    splits[split] = [ex.id for ex in part]
            self._datasets[name] = make_dataset(
                name=name,
                task_kind=spec.task_kind,
                examples=examples,
                num_classes=spec.num_classes,
                label_scale=spec.label_scale,
                splits=splits,
                split_fractions=spec.split_fractions,
                split_seed=spec.split_seed,
            )
        return self._datasets[name]

    def _file_matrix(self, source_name: str, dataset_name: str, split: str | None) -> EmbeddingMatrix:
        spec = self.config.sources[source_name]
        if dataset_name not in spec.files:
            raise L3Error(f"source '{source_name}' has no embedding file for dataset '{dataset_name}'")
        entry = spec.files[dataset_name]
        if isinstance(entry, dict):
            if split is None:
                raise L3Error(f"source '{source_name}' stores '{dataset_name}' per split; a split is required")
            key = (source_name, dataset_name, split)
            if key not in self._matrices:
                self._matrices[key] = load_embeddings(self.config.resolve(entry[split]))
            return self._matrices[key]
        key = (source_name, dataset_name, None)
        if key not in self._matrices:
            self._matrices[key] = load_embeddings(self.config.resolve(entry))
        return self._matrices[key]

    def matrix(self, source_name: str, dataset_name: str, split: str | None = None) -> EmbeddingMatrix:
        spec = self.config.sources[source_name]
        if spec.kind == "hash":
            key = (source_name, dataset_name, None)
            if key not in self._matrices:
                ds = self.dataset(dataset_name)
                ids = ds.ids()
                self._matrices[key] = hash_encode(
                    ds.texts_for(ids), spec.dim, spec.hash_seed, ids=ids, source_name=source_name
                )
            return self._matrices[key]
        return self._file_matrix(source_name, dataset_name, split)

    def view(self, source_name: str, dataset_name: str, split: str, raw: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Rows plus labels for one split; unit-normalized unless raw is asked.

        Fusion wants raw rows because build_fused_representation applies the
        one and only per-segment normalization itself.
        """
        ds = self.dataset(dataset_name)
        matrix = self.matrix(source_name, dataset_name, split)
        aligned = align(ds, matrix, split)
        rows = aligned.rows if raw else unit_rows(aligned.rows)
        return rows, aligned.labels

    def kb(self, name: str) -> KnowledgeBase:
        if name not in self._kbs:
            spec = self.config.knowledge_bases[name]
            self._kbs[name] = load_kb(self.config.resolve(spec.labels), self.config.resolve(spec.vectors))
        return self._kbs[name]


class _RunContext:
    def __init__(self, config: ExperimentConfig, run_dir: Path):
        self.config = config
        self.run_dir = run_dir
        self.resources = Resources(config)
        self.models: dict[tuple[str, str], H.Head] = {}
        self.run: dict = {
            "experiment_id": config.experiment_id,
            "seed": config.seed,
            "config_digest": config.digest,
            "status": "running",
            "phases_completed": [],
            "wall_clock": {},
            "models": {},
            "sequences": {},
            "ensembles": {},
            "strategy_groups": [],
            "reports": {},
        }

    def persist(self) -> Path:
        return write_json_atomic(self.run, self.run_dir / "run.json")


def _out_dim(ds: TaskDataset) -> int:
    return ds.num_classes if ds.task_kind == CLASSIFICATION else 1


def _metric_dict(metric: H.Metric) -> dict:
    return {"kind": metric.kind, "value": metric.value}


def _phase_models(ctx: _RunContext) -> None:
    pairs = sorted({(m, e.task) for e in ctx.config.ensembles for m in e.members})
    for source_name, task_name in pairs:
        ds = ctx.resources.dataset(task_name)
        views = {split: ctx.resources.view(source_name, task_name, split) for split in SPLITS}
        seed = derive_seed(ctx.config.seed, f"model:{source_name}:{task_name}")
        head = H.init_head(H.LINEAR, views["train"][0].shape[1], _out_dim(ds), ds.task_kind, seed)
        cfg = merged_train(ctx.config.train, None, seed=seed)
        trained, history = H.train_head(head, views["train"], views["validation"], cfg)
        ctx.models[(source_name, task_name)] = trained
        rel = Path("models") / f"{_safe(source_name)}__{_safe(task_name)}.l3hd"
        H.save_head(trained, ctx.run_dir / rel)
        ctx.run["models"][f"{source_name}:{task_name}"] = {
            "source": source_name,
            "task": task_name,
            "checkpoint": rel.as_posix(),
            "param_count": H.param_count(trained),
            "val_metric": _metric_dict(H.evaluate(trained, *views["validation"])),
            "test_metric": _metric_dict(H.evaluate(trained, *views["test"])),
            "epochs_run": history.stopped_epoch,
            "best_epoch": history.best_epoch,
        }


def _phase_sequences(ctx: _RunContext) -> None:
    for spec in ctx.config.sequences:
        seq = TaskSequence(
            name=spec.name,
            tasks=list(spec.tasks),
            shared_head=spec.shared_head,
            head_kind=spec.head_kind,
            hidden_dim=spec.hidden_dim,
        )
        datasets = {t: ctx.resources.dataset(t) for t in spec.tasks}
        sources = {t: ctx.resources.matrix(spec.source_for(t), t) for t in spec.tasks}
        cfg = merged_train(ctx.config.train, spec.train, seed=derive_seed(ctx.config.seed, f"sequence:{spec.name}"))
        result = run_sequence(seq, datasets, sources, cfg)
        entry = sequence_to_json(result)
        entry["shared_head"] = spec.shared_head
        entry["head_kind"] = spec.head_kind
        ctx.run["sequences"][spec.name] = entry


def _member_predictions(ctx: _RunContext, ens: EnsembleConfig, split: str) -> tuple[list[np.ndarray], np.ndarray]:
    preds = []
    labels = None
    for member in ens.members:
        x, y = ctx.resources.view(member, ens.task, split)
        head = ctx.models[(member, ens.task)]
        preds.append(H.forward(head, x))
        labels = y
    return preds, labels


def _fused_splits(ctx: _RunContext, ens: EnsembleConfig) -> tuple[dict, int]:
    ds = ctx.resources.dataset(ens.task)
    fused = {}
    misses_total = 0
    for split in SPLITS:
        member_rows = []
        labels = None
        for member in ens.members:
            x, y = ctx.resources.view(member, ens.task, split, raw=True)
            member_rows.append(x)
            labels = y
        aux = None
        if ens.strategy == "llm" and ens.auxiliary_source:
            aux, _ = ctx.resources.view(ens.auxiliary_source, ens.task, split, raw=True)
        know = None
        if ens.strategy == "ki" and ens.knowledge_base:
            kb = ctx.resources.kb(ens.knowledge_base)
            texts = ds.texts_for(ds.split_ids(split))
            know, misses = knowledge_rows(texts, kb)
            misses_total += misses
        fused[split] = (build_fused_representation(member_rows, aux, know), labels)
    return fused, misses_total


def _phase_ensembles(ctx: _RunContext) -> None:
    for ens in ctx.config.ensembles:
        spec = EnsembleSpec(
            name=ens.name,
            strategy=ens.strategy,
            task=ens.task,
            members=list(ens.members),
            auxiliary_source=ens.auxiliary_source,
            knowledge_base=ens.knowledge_base,
            fusion_kind=ens.fusion_kind,
            fusion_hidden=ens.fusion_hidden,
            weight_constraint=ens.weight_constraint,
        )
        spec.validate()
        ds = ctx.resources.dataset(ens.task)
        entry: dict = {"strategy": ens.strategy, "task": ens.task, "members": list(ens.members)}
        if ens.strategy in ("naive", "weighted"):
            test_preds, test_y = _member_predictions(ctx, ens, "test")
            if ens.strategy == "naive":
                combined = naive_combine(test_preds)
            else:
                val_preds, val_y = _member_predictions(ctx, ens, "validation")
                weights = fit_weights(val_preds, val_y, ds.task_kind, ens.weight_constraint)
                combined = weighted_combine(test_preds, weights)
                entry["weights"] = [float(w) for w in weights.values]
                entry["weights_degenerate"] = weights.degenerate
            entry["metric"] = _metric_dict(H.metric_from_predictions(combined, test_y, ds.task_kind))
        else:
            fused, misses = _fused_splits(ctx, ens)
            cfg = merged_train(ctx.config.train, ens.train, seed=derive_seed(ctx.config.seed, f"ensemble:{ens.name}"))
            head, history, metric = train_fusion_ensemble(
                ds.task_kind,
                _out_dim(ds),
                fused,
                cfg,
                head_kind=ens.fusion_kind,
                hidden_dim=ens.fusion_hidden,
                seed=derive_seed(ctx.config.seed, f"fusion:{ens.name}"),
            )
            rel = Path("models") / f"fusion__{_safe(ens.name)}.l3hd"
            H.save_head(head, ctx.run_dir / rel)
            entry["metric"] = _metric_dict(metric)
            entry["fusion_params"] = H.param_count(head)
            entry["fusion_checkpoint"] = rel.as_posix()
            entry["epochs_run"] = history.stopped_epoch
            if ens.strategy == "ki":
                entry["zero_knowledge_rows"] = misses
        entry["member_param_total"] = int(sum(H.param_count(ctx.models[(m, ens.task)]) for m in ens.members))
        ctx.run["ensembles"][ens.name] = entry


def _strategy_groups(ctx: _RunContext) -> list[dict]:
    groups: dict[tuple, dict] = {}
    order: list[tuple] = []
    for name, entry in ctx.run["ensembles"].items():
        key = (entry["task"], tuple(entry["members"]))
        if key not in groups:
            order.append(key)
            groups[key] = {
                "name": f"{entry['task']}: " + " + ".join(entry["members"]),
                "task": entry["task"],
                "members": list(entry["members"]),
                "metric_kind": entry["metric"]["kind"],
                "member_param_total": entry["member_param_total"],
                "metrics": {},
                "llm_fusion_params": None,
                "ki_fusion_params": None,
            }
        group = groups[key]
        strategy = entry["strategy"]
        if strategy in group["metrics"]:
            logger.warning("duplicate %s ensemble for group %s; keeping the first", strategy, group["name"])
            continue
        group["metrics"][strategy] = entry["metric"]["value"]
        if strategy in ("llm", "ki"):
            group[f"{strategy}_fusion_params"] = entry.get("fusion_params")
    return [groups[key] for key in order]


def _phase_reports(ctx: _RunContext) -> None:
    run_dir = ctx.run_dir
    records = []
    # sorted by name so re-emission from the stored run (sorted keys) matches
    for name in sorted(ctx.run["sequences"]):
        records.extend(ctx.run["sequences"][name]["transfers"])
    files: dict[str, str] = {}
    if ctx.run["sequences"]:
        csv_path, md_path = emit_transfer_table(records, run_dir)
        files["transfer_table_csv"] = csv_path.name
        files["transfer_table_md"] = md_path.name
    groups = _strategy_groups(ctx)
    ctx.run["strategy_groups"] = groups
    if groups:
        csv_path, md_path = emit_strategy_table(groups, run_dir)
        files["strategy_table_csv"] = csv_path.name
        files["strategy_table_md"] = md_path.name
    if ctx.run["sequences"]:
        plot_path = emit_plot_data(ctx.run["sequences"], run_dir / "plot_data.json")
        files["plot_data"] = plot_path.name
    ctx.run["reports"] = files


_PHASES = (
    ("models", _phase_models),
    ("sequences", _phase_sequences),
    ("ensembles", _phase_ensembles),
    ("reports", _phase_reports),
)


def run_single(config: ExperimentConfig, run_dir: str | Path) -> RunOutcome:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ctx = _RunContext(config, run_dir)
    ctx.persist()
    for phase_name, phase_fn in _PHASES:
        started = time.perf_counter()
        try:
            phase_fn(ctx)
        except (L3Error, OSError, ValueError, KeyError) as exc:
            ctx.run["status"] = "failed"
            ctx.run["failed_phase"] = phase_name
            ctx.run["error"] = f"{type(exc).__name__}: {exc}"
            path = ctx.persist()
            logger.error("phase '%s' failed: %s", phase_name, exc)
            return RunOutcome(False, run_dir, path, failed_phase=phase_name, error=ctx.run["error"], run=ctx.run)
        ctx.run["wall_clock"][phase_name] = time.perf_counter() - started
        ctx.run["phases_completed"].append(phase_name)
        ctx.persist()
    ctx.run["status"] = "ok"
    path = ctx.persist()
    return RunOutcome(True, run_dir, path, run=ctx.run)


def _aggregate(outcomes: dict[int, RunOutcome]) -> dict:
    agg: dict = {"seeds": sorted(outcomes), "runs": {}, "ensembles": {}, "sequences": {}}
    for seed, outcome in sorted(outcomes.items()):
        agg["runs"][str(seed)] = {"ok": outcome.ok, "run_json": f"seed_{seed}/run.json"}
    names: list[str] = []
    for outcome in outcomes.values():
        for name in outcome.run.get("ensembles", {}):
            if name not in names:
                names.append(name)
    for name in names:
        values = []
        kind = None
        for seed in sorted(outcomes):
            entry = outcomes[seed].run.get("ensembles", {}).get(name)
            if entry is not None:
                values.append(entry["metric"]["value"])
                kind = entry["metric"]["kind"]
        if values:
            agg["ensembles"][name] = {
                "kind": kind,
                "values": values,
                "mean": float(np.mean(values)),
                "min": float(np.min(values)),
                "max": float(np.max(values)),
            }
    seq_names: list[str] = []
    for outcome in outcomes.values():
        for name in outcome.run.get("sequences", {}):
            if name not in seq_names:
                seq_names.append(name)
    for name in seq_names:
        grids = [
            np.asarray(outcomes[seed].run["sequences"][name]["rows"])
            for seed in sorted(outcomes)
            if name in outcomes[seed].run.get("sequences", {})
        ]
        if grids and all(g.shape == grids[0].shape for g in grids):
            agg["sequences"][name] = {"mean_rows": np.mean(grids, axis=0).tolist()}
    return agg


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None, seeds: int = 1) -> RunOutcome:
    """Run once, or fan out over seeds seed..seed+n-1 with an aggregate file."""
    base_dir = Path(out_dir) if out_dir is not None else config.resolve(config.output_dir) / config.experiment_id
    if seeds <= 1:
        return run_single(config, base_dir)
    outcomes: dict[int, RunOutcome] = {}
    for i in range(seeds):
        seed = config.seed + i
        sub = ExperimentConfig(**{**vars(config)})
        sub.seed = seed
        sub.train = merged_train(config.train, None, seed=seed)
        outcomes[seed] = run_single(sub, base_dir / f"seed_{seed}")
    agg_path = write_json_atomic(_aggregate(outcomes), base_dir / "aggregate.json")
    ok = all(o.ok for o in outcomes.values())
    failed = next((o for o in outcomes.values() if not o.ok), None)
    return RunOutcome(
        ok,
        base_dir,
        agg_path,
        failed_phase=failed.failed_phase if failed else None,
        error=failed.error if failed else None,
        run={"aggregate": True, "seeds": sorted(outcomes)},
    )


def encode_file(input_path: str | Path, dim: int, seed: int, out_path: str | Path, source_name: str | None = None) -> dict:
    """Hash-encode a JSONL dataset into an embedding file plus manifest."""
    examples = load_jsonl(input_path)
    matrix = hash_encode(
        [ex.text for ex in examples],
        dim,
        seed,
        ids=[ex.id for ex in examples],
        source_name=source_name or f"hash{dim}s{seed}",
    )
    manifest = store_embeddings(matrix, out_path, dataset_name=Path(input_path).stem)
    return {
        "out": str(out_path),
        "manifest": str(out_path) + ".manifest.json",
        "count": matrix.count,
        "dim": matrix.dim,
        "content_digest": manifest.content_digest,
    }


def emit_reports_from_run(run_path: str | Path, out_dir: str | Path | None = None) -> dict[str, str]:
    """Re-emit tables and plot data from a stored run.json."""
    import json

    run_path = Path(run_path)
    run = json.loads(run_path.read_text(encoding="utf-8"))
    target = Path(out_dir) if out_dir is not None else run_path.parent
    files: dict[str, str] = {}
    records = []
    for name in sorted(run.get("sequences", {})):
        records.extend(run["sequences"][name]["transfers"])
    if run.get("sequences"):
        csv_path, md_path = emit_transfer_table(records, target)
        files["transfer_table_csv"] = str(csv_path)
        files["transfer_table_md"] = str(md_path)
    groups = run.get("strategy_groups", [])
    if groups:
        csv_path, md_path = emit_strategy_table(groups, target)
        files["strategy_table_csv"] = str(csv_path)
        files["strategy_table_md"] = str(md_path)
    if run.get("sequences"):
        plot_path = emit_plot_data(run["sequences"], target / "plot_data.json")
        files["plot_data"] = str(plot_path)
    return files

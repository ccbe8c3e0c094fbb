"""Experiment config: JSON schema checking with every violation reported.

Validation covers structure, types, and cross-references between sections.
It deliberately does not stat referenced files; those failures belong to
the run phases so earlier results still land on disk.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .ensemble import STRATEGIES
from .errors import ConfigValidationError
from .heads import TrainConfig

logger = logging.getLogger(__name__)

TASK_KINDS = ("classification", "regression")
HEAD_KINDS = ("linear", "mlp1")
SPLITS = ("train", "validation", "test")

_TRAIN_KEYS = {
    "learning_rate": (int, float),
    "optimizer": str,
    "batch_size": int,
    "max_epochs": int,
    "early_stop_patience": int,
    "early_stop_tolerance": (int, float),
    "l2_penalty": (int, float),
}


@dataclass(frozen=True)
class Violation:
    location: str
    message: str
    kind: str = "invalid_value"  # parse_error | unknown_key | unresolved_reference | invalid_value

    def to_dict(self) -> dict:
        return {"location": self.location, "message": self.message, "kind": self.kind}


@dataclass
class DatasetSpec:
    name: str
    task_kind: str
    path: str | None = None
    paths: dict[str, str] | None = None
    num_classes: int | None = None
    label_scale: float = 1.0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 0


@dataclass
class SourceSpec:
    name: str
    kind: str  # hash | file
    dim: int = 0
    hash_seed: int = 0
    files: dict[str, object] = field(default_factory=dict)  # dataset -> path or {split: path}


@dataclass
class KnowledgeBaseSpec:
    name: str
    labels: str
    vectors: str


@dataclass
class SequenceSpec:
    name: str
    tasks: list[str]
    shared_head: bool = True
    head_kind: str = "linear"
    hidden_dim: int = 32
    source: object = ""  # source name, or {task: source name}
    train: dict | None = None

    def source_for(self, task: str) -> str:
        return self.source[task] if isinstance(self.source, dict) else str(self.source)


@dataclass
class EnsembleConfig:
    name: str
    strategy: str
    task: str
    members: list[str]
    auxiliary_source: str | None = None
    knowledge_base: str | None = None
    fusion_kind: str = "linear"
    fusion_hidden: int = 32
    weight_constraint: str = "simplex"
    train: dict | None = None


@dataclass
class ExperimentConfig:
    experiment_id: str
    seed: int
    output_dir: str
    train: TrainConfig
    datasets: dict[str, DatasetSpec]
    sources: dict[str, SourceSpec]
    knowledge_bases: dict[str, KnowledgeBaseSpec]
    sequences: list[SequenceSpec]
    ensembles: list[EnsembleConfig]
    digest: str
    base_dir: Path
    raw: dict

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def config_digest(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _want(obj: dict, key: str, types, loc: str, out: list[Violation], required: bool = True, default=None):
    if key not in obj:
        if required:
            out.append(Violation(loc, f"missing required key '{key}'"))
        return default
    value = obj[key]
    if isinstance(value, bool) and types is not bool and not (isinstance(types, tuple) and bool in types):
        out.append(Violation(f"{loc}.{key}", f"expected {getattr(types, '__name__', types)}, got bool"))
        return default
    if not isinstance(value, types):
        name = types.__name__ if hasattr(types, "__name__") else "/".join(t.__name__ for t in types)
        out.append(Violation(f"{loc}.{key}", f"expected {name}, got {type(value).__name__}"))
        return default
    return value


def _reject_unknown(obj: dict, allowed: set[str], loc: str, out: list[Violation]) -> None:
    for key in obj:
        if key not in allowed:
            out.append(Violation(f"{loc}.{key}", "unknown key", kind="unknown_key"))


def _unresolved(loc: str, message: str) -> Violation:
    return Violation(loc, message, kind="unresolved_reference")


def _check_train(obj: dict, loc: str, out: list[Violation]) -> dict:
    _reject_unknown(obj, set(_TRAIN_KEYS), loc, out)
    clean = {}
    for key, types in _TRAIN_KEYS.items():
        if key in obj:
            value = _want(obj, key, types, loc, out, required=False)
            if value is not None:
                clean[key] = value
    if clean.get("optimizer") not in (None, "adam", "sgd"):
        out.append(Violation(f"{loc}.optimizer", f"must be 'adam' or 'sgd', got '{clean['optimizer']}'"))
    for key in ("learning_rate",):
        if key in clean and clean[key] <= 0:
            out.append(Violation(f"{loc}.{key}", "must be positive"))
    for key in ("batch_size", "max_epochs", "early_stop_patience"):
        if key in clean and clean[key] < 1:
            out.append(Violation(f"{loc}.{key}", "must be >= 1"))
    if "l2_penalty" in clean and clean["l2_penalty"] < 0:
        out.append(Violation(f"{loc}.l2_penalty", "must be >= 0"))
    return clean


def _check_dataset(obj: dict, loc: str, out: list[Violation]) -> DatasetSpec | None:
    allowed = {"name", "task_kind", "path", "paths", "num_classes", "label_scale", "split_fractions", "split_seed"}
    _reject_unknown(obj, allowed, loc, out)
    name = _want(obj, "name", str, loc, out)
    kind = _want(obj, "task_kind", str, loc, out)
    if kind is not None and kind not in TASK_KINDS:
        out.append(Violation(f"{loc}.task_kind", f"must be one of {TASK_KINDS}, got '{kind}'"))
    path = _want(obj, "path", str, loc, out, required=False)
    paths = _want(obj, "paths", dict, loc, out, required=False)
    if (path is None) == (paths is None):
        out.append(Violation(loc, "need exactly one of 'path' (with split fractions) or 'paths' (per split)"))
    if paths is not None:
        if set(paths) != set(SPLITS):
            out.append(Violation(f"{loc}.paths", f"must map exactly the splits {SPLITS}"))
        for split, value in paths.items():
            if not isinstance(value, str):
                out.append(Violation(f"{loc}.paths.{split}", "must be a path string"))
    num_classes = _want(obj, "num_classes", int, loc, out, required=False)
    if kind == "classification" and (num_classes is None or num_classes < 2):
        out.append(Violation(f"{loc}.num_classes", "classification needs num_classes >= 2"))
    if kind == "regression" and num_classes is not None:
        out.append(Violation(f"{loc}.num_classes", "regression datasets do not take num_classes"))
    label_scale = _want(obj, "label_scale", (int, float), loc, out, required=False, default=1.0)
    if label_scale is not None and label_scale <= 0:
        out.append(Violation(f"{loc}.label_scale", "must be positive"))
    if kind == "classification" and "label_scale" in obj:
        out.append(Violation(f"{loc}.label_scale", "label_scale applies to regression datasets only"))
    fractions = _want(obj, "split_fractions", list, loc, out, required=False, default=[0.7, 0.15, 0.15])
    if fractions is not None:
        ok = len(fractions) == 3 and all(isinstance(f, (int, float)) and not isinstance(f, bool) and f >= 0 for f in fractions)
        if not ok or abs(sum(fractions) - 1.0) > 1e-9:
            out.append(Violation(f"{loc}.split_fractions", f"must be three non-negatives summing to 1, got {fractions}"))
            fractions = [0.7, 0.15, 0.15]
    split_seed = _want(obj, "split_seed", int, loc, out, required=False, default=0)
    if name is None or kind is None:
        return None
    return DatasetSpec(
        name=name,
        task_kind=kind,
        path=path,
        paths=paths,
        num_classes=num_classes,
        label_scale=float(label_scale if label_scale is not None else 1.0),
        split_fractions=tuple(float(f) for f in fractions),
        split_seed=int(split_seed or 0),
    )


def _check_source(obj: dict, loc: str, dataset_names: set[str], out: list[Violation]) -> SourceSpec | None:
    allowed = {"name", "kind", "dim", "hash_seed", "files"}
    _reject_unknown(obj, allowed, loc, out)
    name = _want(obj, "name", str, loc, out)
    kind = _want(obj, "kind", str, loc, out)
    if kind is not None and kind not in ("hash", "file"):
        out.append(Violation(f"{loc}.kind", f"must be 'hash' or 'file', got '{kind}'"))
        kind = None
    dim = _want(obj, "dim", int, loc, out, required=False)
    hash_seed = _want(obj, "hash_seed", int, loc, out, required=False)
    files = _want(obj, "files", dict, loc, out, required=False)
    if kind == "hash":
        if dim is None or dim < 1:
            out.append(Violation(f"{loc}.dim", "hash sources need dim >= 1"))
        if hash_seed is None:
            out.append(Violation(f"{loc}.hash_seed", "hash sources need hash_seed"))
        if files is not None:
            out.append(Violation(f"{loc}.files", "hash sources do not take files"))
    elif kind == "file":
        if not files:
            out.append(Violation(f"{loc}.files", "file sources need a dataset-to-path map"))
        else:
            for ds, value in files.items():
                if ds not in dataset_names:
                    out.append(_unresolved(f"{loc}.files.{ds}", f"unknown dataset '{ds}'"))
                if isinstance(value, dict):
                    for split, p in value.items():
                        if split not in SPLITS:
                            out.append(Violation(f"{loc}.files.{ds}.{split}", f"unknown split '{split}'"))
                        elif not isinstance(p, str):
                            out.append(Violation(f"{loc}.files.{ds}.{split}", "must be a path string"))
                    if isinstance(value, dict) and set(value) and not set(value).issuperset(SPLITS) and set(value).issubset(SPLITS):
                        missing = [s for s in SPLITS if s not in value]
                        out.append(Violation(f"{loc}.files.{ds}", f"per-split paths must cover all splits, missing {missing}"))
                elif not isinstance(value, str):
                    out.append(Violation(f"{loc}.files.{ds}", "must be a path string or a split-to-path map"))
        if dim is not None or hash_seed is not None:
            out.append(Violation(loc, "file sources do not take dim or hash_seed"))
    if name is None or kind is None:
        return None
    return SourceSpec(name=name, kind=kind, dim=int(dim or 0), hash_seed=int(hash_seed or 0), files=files or {})


def _check_sequence(obj: dict, loc: str, datasets: set[str], sources: set[str], out: list[Violation]) -> SequenceSpec | None:
    allowed = {"name", "tasks", "shared_head", "head_kind", "hidden_dim", "source", "train"}
    _reject_unknown(obj, allowed, loc, out)
    name = _want(obj, "name", str, loc, out)
    tasks = _want(obj, "tasks", list, loc, out)
    if tasks is not None:
        if not tasks:
            out.append(Violation(f"{loc}.tasks", "must list at least one task"))
        for i, t in enumerate(tasks):
            if not isinstance(t, str):
                out.append(Violation(f"{loc}.tasks[{i}]", "task names must be strings"))
            elif t not in datasets:
                out.append(_unresolved(f"{loc}.tasks[{i}]", f"unknown dataset '{t}'"))
        names = [t for t in tasks if isinstance(t, str)]
        if len(set(names)) != len(names):
            out.append(Violation(f"{loc}.tasks", "tasks must be distinct"))
    shared = _want(obj, "shared_head", bool, loc, out, required=False, default=True)
    head_kind = _want(obj, "head_kind", str, loc, out, required=False, default="linear")
    if head_kind not in HEAD_KINDS:
        out.append(Violation(f"{loc}.head_kind", f"must be one of {HEAD_KINDS}, got '{head_kind}'"))
    hidden = _want(obj, "hidden_dim", int, loc, out, required=False, default=32)
    if hidden is not None and hidden < 1:
        out.append(Violation(f"{loc}.hidden_dim", "must be >= 1"))
    source = obj.get("source")
    if source is None:
        out.append(Violation(loc, "missing required key 'source'"))
    elif isinstance(source, str):
        if source not in sources:
            out.append(_unresolved(f"{loc}.source", f"unknown source '{source}'"))
    elif isinstance(source, dict):
        for task, src in source.items():
            if not isinstance(src, str) or src not in sources:
                out.append(_unresolved(f"{loc}.source.{task}", f"unknown source '{src}'"))
        if tasks and set(source) != set(t for t in tasks if isinstance(t, str)):
            out.append(Violation(f"{loc}.source", "per-task sources must cover exactly the sequence's tasks"))
    else:
        out.append(Violation(f"{loc}.source", "must be a source name or a task-to-source map"))
    train = _want(obj, "train", dict, loc, out, required=False)
    train_clean = _check_train(train, f"{loc}.train", out) if train is not None else None
    if name is None or tasks is None:
        return None
    return SequenceSpec(
        name=name,
        tasks=[t for t in tasks if isinstance(t, str)],
        shared_head=bool(shared),
        head_kind=str(head_kind),
        hidden_dim=int(hidden or 32),
        source=source if source is not None else "",
        train=train_clean,
    )


def _check_ensemble(
    obj: dict, loc: str, datasets: set[str], sources: set[str], kbs: set[str], out: list[Violation]
) -> EnsembleConfig | None:
    allowed = {
        "name",
        "strategy",
        "task",
        "members",
        "auxiliary_source",
        "knowledge_base",
        "fusion_kind",
        "fusion_hidden",
        "weight_constraint",
        "train",
    }
    _reject_unknown(obj, allowed, loc, out)
    name = _want(obj, "name", str, loc, out)
    strategy = _want(obj, "strategy", str, loc, out)
    if strategy is not None and strategy not in STRATEGIES:
        out.append(Violation(f"{loc}.strategy", f"must be one of {STRATEGIES}, got '{strategy}'"))
    task = _want(obj, "task", str, loc, out)
    if task is not None and task not in datasets:
        out.append(_unresolved(f"{loc}.task", f"unknown dataset '{task}'"))
    members = _want(obj, "members", list, loc, out)
    if members is not None:
        if not members:
            out.append(Violation(f"{loc}.members", "must list at least one member source"))
        for i, m in enumerate(members):
            if not isinstance(m, str):
                out.append(Violation(f"{loc}.members[{i}]", "member names must be strings"))
            elif m not in sources:
                out.append(_unresolved(f"{loc}.members[{i}]", f"unknown source '{m}'"))
        names = [m for m in members if isinstance(m, str)]
        if len(set(names)) != len(names):
            out.append(Violation(f"{loc}.members", "members must be distinct"))
    aux = _want(obj, "auxiliary_source", str, loc, out, required=False)
    if aux is not None and aux not in sources:
        out.append(_unresolved(f"{loc}.auxiliary_source", f"unknown source '{aux}'"))
    kb = _want(obj, "knowledge_base", str, loc, out, required=False)
    if kb is not None and kb not in kbs:
        out.append(_unresolved(f"{loc}.knowledge_base", f"unknown knowledge base '{kb}'"))
    if strategy == "llm" and aux is None:
        out.append(Violation(loc, "llm strategy needs auxiliary_source"))
    if strategy == "ki" and kb is None:
        out.append(Violation(loc, "ki strategy needs knowledge_base"))
    fusion_kind = _want(obj, "fusion_kind", str, loc, out, required=False, default="linear")
    if fusion_kind not in HEAD_KINDS:
        out.append(Violation(f"{loc}.fusion_kind", f"must be one of {HEAD_KINDS}, got '{fusion_kind}'"))
    fusion_hidden = _want(obj, "fusion_hidden", int, loc, out, required=False, default=32)
    constraint = _want(obj, "weight_constraint", str, loc, out, required=False, default="simplex")
    if constraint not in ("simplex", "unconstrained"):
        out.append(Violation(f"{loc}.weight_constraint", f"must be 'simplex' or 'unconstrained', got '{constraint}'"))
    train = _want(obj, "train", dict, loc, out, required=False)
    train_clean = _check_train(train, f"{loc}.train", out) if train is not None else None
    if name is None or strategy is None or task is None or members is None:
        return None
    return EnsembleConfig(
        name=name,
        strategy=strategy,
        task=task,
        members=[m for m in members if isinstance(m, str)],
        auxiliary_source=aux,
        knowledge_base=kb,
        fusion_kind=str(fusion_kind),
        fusion_hidden=int(fusion_hidden or 32),
        weight_constraint=str(constraint),
        train=train_clean,
    )


def validate_config_data(raw: dict, base_dir: str | Path = ".") -> tuple[ExperimentConfig | None, list[Violation]]:
    """Check a parsed config; returns (config, violations). Config is None on failure."""
    out: list[Violation] = []
    if not isinstance(raw, dict):
        return None, [Violation("$", f"config root must be an object, got {type(raw).__name__}")]
    allowed = {"experiment_id", "seed", "output_dir", "train", "datasets", "sources", "knowledge_bases", "sequences", "ensembles"}
    _reject_unknown(raw, allowed, "$", out)

    experiment_id = _want(raw, "experiment_id", str, "$", out)
    seed = _want(raw, "seed", int, "$", out)
    output_dir = _want(raw, "output_dir", str, "$", out, required=False, default="runs")
    train_obj = _want(raw, "train", dict, "$", out, required=False)
    train_clean = _check_train(train_obj, "$.train", out) if train_obj is not None else {}

    datasets: dict[str, DatasetSpec] = {}
    items = _want(raw, "datasets", list, "$", out, required=False, default=[])
    for i, obj in enumerate(items or []):
        loc = f"datasets[{i}]"
        if not isinstance(obj, dict):
            out.append(Violation(loc, "must be an object"))
            continue
        spec = _check_dataset(obj, loc, out)
        if spec is not None:
            if spec.name in datasets:
                out.append(Violation(f"{loc}.name", f"duplicate dataset name '{spec.name}'"))
            else:
                datasets[spec.name] = spec

    sources: dict[str, SourceSpec] = {}
    items = _want(raw, "sources", list, "$", out, required=False, default=[])
    for i, obj in enumerate(items or []):
        loc = f"sources[{i}]"
        if not isinstance(obj, dict):
            out.append(Violation(loc, "must be an object"))
            continue
        spec = _check_source(obj, loc, set(datasets), out)
        if spec is not None:
            if spec.name in sources:
                out.append(Violation(f"{loc}.name", f"duplicate source name '{spec.name}'"))
            else:
                sources[spec.name] = spec

    kbs: dict[str, KnowledgeBaseSpec] = {}
    items = _want(raw, "knowledge_bases", list, "$", out, required=False, default=[])
    for i, obj in enumerate(items or []):
        loc = f"knowledge_bases[{i}]"
        if not isinstance(obj, dict):
            out.append(Violation(loc, "must be an object"))
            continue
        _reject_unknown(obj, {"name", "labels", "vectors"}, loc, out)
        name = _want(obj, "name", str, loc, out)
        labels = _want(obj, "labels", str, loc, out)
        vectors = _want(obj, "vectors", str, loc, out)
        if name is not None and labels is not None and vectors is not None:
            if name in kbs:
                out.append(Violation(f"{loc}.name", f"duplicate knowledge base name '{name}'"))
            else:
                kbs[name] = KnowledgeBaseSpec(name=name, labels=labels, vectors=vectors)

    sequences: list[SequenceSpec] = []
    items = _want(raw, "sequences", list, "$", out, required=False, default=[])
    seen = set()
    for i, obj in enumerate(items or []):
        loc = f"sequences[{i}]"
        if not isinstance(obj, dict):
            out.append(Violation(loc, "must be an object"))
            continue
        spec = _check_sequence(obj, loc, set(datasets), set(sources), out)
        if spec is not None:
            if spec.name in seen:
                out.append(Violation(f"{loc}.name", f"duplicate sequence name '{spec.name}'"))
            seen.add(spec.name)
            sequences.append(spec)

    ensembles: list[EnsembleConfig] = []
    items = _want(raw, "ensembles", list, "$", out, required=False, default=[])
    seen = set()
    for i, obj in enumerate(items or []):
        loc = f"ensembles[{i}]"
        if not isinstance(obj, dict):
            out.append(Violation(loc, "must be an object"))
            continue
        spec = _check_ensemble(obj, loc, set(datasets), set(sources), set(kbs), out)
        if spec is not None:
            if spec.name in seen:
                out.append(Violation(f"{loc}.name", f"duplicate ensemble name '{spec.name}'"))
            seen.add(spec.name)
            ensembles.append(spec)

    if out:
        return None, out

    base = TrainConfig()
    for key, value in train_clean.items():
        setattr(base, key, value)
    base.seed = int(seed)

    config = ExperimentConfig(
        experiment_id=str(experiment_id),
        seed=int(seed),
        output_dir=str(output_dir),
        train=base,
        datasets=datasets,
        sources=sources,
        knowledge_bases=kbs,
        sequences=sequences,
        ensembles=ensembles,
        digest=config_digest(raw),
        base_dir=Path(base_dir),
        raw=raw,
    )
    return config, []


def validate_config(path: str | Path) -> ExperimentConfig:
    """Load and validate a config file; raises with every violation at once."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigValidationError([Violation("$", f"cannot read config: {exc}", kind="parse_error")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigValidationError([Violation("$", f"invalid JSON: {exc}", kind="parse_error")]) from exc
    config, violations = validate_config_data(raw, base_dir=path.parent)
    if violations:
        raise ConfigValidationError(violations)
    return config


def merged_train(base: TrainConfig, override: dict | None, seed: int | None = None) -> TrainConfig:
    """TrainConfig with per-section overrides applied on top of the global one."""
    merged = TrainConfig(**{k: getattr(base, k) for k in vars(base)})
    for key, value in (override or {}).items():
        setattr(merged, key, value)
    if seed is not None:
        merged.seed = seed
    merged.validate()
    return merged

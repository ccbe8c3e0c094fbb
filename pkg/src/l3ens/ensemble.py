"""Ensemble strategies over frozen-embedding task heads.

Two families:
  prediction space: naive averaging and fitted convex weighting
  representation space: concatenate unit-normalized member embeddings with
  an optional auxiliary segment (llm) or linked knowledge segment (ki),
  then train one fusion head on top.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import heads as H
from .embedding_store import unit_rows
from .errors import EmptyMemberList, ShapeMismatch
from .heads import Head, Metric, TrainConfig, TrainHistory

logger = logging.getLogger(__name__)

STRATEGIES = ("naive", "weighted", "llm", "ki")

PGD_ITERATIONS = 1000
PGD_STEP_SCALE = 0.1  # of 1/L, so descent is monotone
RIDGE = 1e-8


@dataclass
class EnsembleSpec:
    name: str
    strategy: str
    task: str
    members: list[str]
    auxiliary_source: str | None = None
    knowledge_base: str | None = None
    fusion_kind: str = H.LINEAR
    fusion_hidden: int = 32
    weight_constraint: str = "simplex"

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{self.strategy}'")
        if not self.members:
            raise EmptyMemberList(f"ensemble '{self.name}' has no members")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"ensemble '{self.name}' lists a member twice")
        if self.strategy == "llm" and not self.auxiliary_source:
            raise ValueError(f"llm ensemble '{self.name}' needs auxiliary_source")
        if self.strategy == "ki" and not self.knowledge_base:
            raise ValueError(f"ki ensemble '{self.name}' needs knowledge_base")
        if self.weight_constraint not in ("simplex", "unconstrained"):
            raise ValueError(f"unknown weight constraint '{self.weight_constraint}'")
        if self.fusion_kind not in (H.LINEAR, H.MLP1):
            raise ValueError(f"unknown fusion head kind '{self.fusion_kind}'")


@dataclass
class EnsembleWeights:
    values: np.ndarray
    degenerate: bool = False

    def validate(self, constraint: str = "simplex") -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if constraint == "simplex":
            if v.min() < -1e-12 or abs(v.sum() - 1.0) > 1e-9:
                raise ValueError(f"weights {v} are not on the simplex")


def _stack_predictions(member_predictions: list[np.ndarray]) -> np.ndarray:
    if not member_predictions:
        raise EmptyMemberList("no member predictions")
    shapes = {np.asarray(p).shape for p in member_predictions}
    if len(shapes) != 1:
        raise ShapeMismatch(f"member predictions disagree on shape: {sorted(shapes)}")
    return np.stack([np.asarray(p, dtype=np.float64) for p in member_predictions])


def _renormalize_rows(combined: np.ndarray) -> np.ndarray:
    # Class-probability rows should already sum to 1; only repair real
    # drift so exact inputs pass through bit-identical.
    if combined.ndim != 2:
        return combined
    sums = combined.sum(axis=1)
    off = np.abs(sums - 1.0) > 1e-12
    if off.any():
        combined = combined.copy()
        combined[off] /= sums[off, None]
    return combined


def naive_combine(member_predictions: list[np.ndarray]) -> np.ndarray:
    """Plain mean over members; class-probability rows are kept summing to 1."""
    return _renormalize_rows(_stack_predictions(member_predictions).mean(axis=0))


def weighted_combine(member_predictions: list[np.ndarray], weights: EnsembleWeights) -> np.ndarray:
    stacked = _stack_predictions(member_predictions)
    values = np.asarray(weights.values, dtype=np.float64)
    if values.shape != (stacked.shape[0],):
        raise ShapeMismatch(f"{stacked.shape[0]} members but {values.shape} weights")
    return _renormalize_rows(np.tensordot(values, stacked, axes=1))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u)
    positions = np.arange(1, v.size + 1)
    rho = np.nonzero(u + (1.0 - cumulative) / positions > 0.0)[0][-1]
    theta = (1.0 - cumulative[rho]) / (rho + 1.0)
    return np.maximum(v + theta, 0.0)


def ensemble_objective(member_predictions: list[np.ndarray], targets: np.ndarray, weights: np.ndarray, task_kind: str) -> float:
    """Fitting objective: MSE for regression, mean negative log-prob otherwise."""
    stacked = _stack_predictions(member_predictions)
    w = np.asarray(weights, dtype=np.float64)
    if task_kind == H.REGRESSION:
        combined = np.tensordot(w, stacked, axes=1)
        r = combined - np.asarray(targets, dtype=np.float64)
        return float(np.mean(r * r))
    y = np.asarray(targets, dtype=np.int64)
    q = stacked[:, np.arange(stacked.shape[1]), y]  # member prob of the true class
    mixed = w @ q
    return float(-np.mean(np.log(np.maximum(mixed, 1e-300))))


def fit_weights(
    member_predictions: list[np.ndarray],
    targets: np.ndarray,
    task_kind: str = H.REGRESSION,
    constraint: str = "simplex",
) -> EnsembleWeights:
    """Fit combination weights on held-out predictions.

    Simplex fitting runs projected gradient descent from the best single
    member with a step of 0.1/L (L a Lipschitz bound on the gradient), so
    the objective never rises above that member's. Identical member
    predictions have no usable signal; that returns uniform weights with
    the degenerate flag set instead of failing.
    """
    stacked = _stack_predictions(member_predictions)
    m, n = stacked.shape[0], stacked.shape[1]
    if m == 1:
        return EnsembleWeights(values=np.array([1.0]))
    first = stacked[0]
    if all(np.array_equal(stacked[i], first) for i in range(1, m)):
        logger.warning("all %d member prediction sets are identical; returning uniform weights", m)
        return EnsembleWeights(values=np.full(m, 1.0 / m), degenerate=True)

    if constraint == "unconstrained":
        if task_kind != H.REGRESSION:
            raise ValueError("unconstrained fitting is defined for regression only")
        p = stacked.T  # (n, m)
        gram = p.T @ p + RIDGE * np.eye(m)
        values = np.linalg.solve(gram, p.T @ np.asarray(targets, dtype=np.float64))
        return EnsembleWeights(values=values)

    if task_kind == H.REGRESSION:
        p = stacked.T
        y = np.asarray(targets, dtype=np.float64)
        lipschitz = 2.0 * float(np.linalg.eigvalsh(p.T @ p)[-1]) / n

        def grad(w: np.ndarray) -> np.ndarray:
            return (2.0 / n) * (p.T @ (p @ w - y))

    else:
        y = np.asarray(targets, dtype=np.int64)
        q = stacked[:, np.arange(n), y].T  # (n, m), entries in (0, 1]
        q_min = float(q.min())
        lipschitz = float(np.linalg.eigvalsh(q.T @ q)[-1]) / (n * q_min * q_min)

        def grad(w: np.ndarray) -> np.ndarray:
            mixed = q @ w
            return -(q.T @ (1.0 / mixed)) / n

    losses = [ensemble_objective(member_predictions, targets, np.eye(m)[i], task_kind) for i in range(m)]
    w = np.eye(m)[int(np.argmin(losses))]
    step = PGD_STEP_SCALE / max(lipschitz, 1e-12)
    for _ in range(PGD_ITERATIONS):
        w = project_simplex(w - step * grad(w))
    return EnsembleWeights(values=w)


def build_fused_representation(
    member_rows: list[np.ndarray],
    auxiliary_rows: np.ndarray | None = None,
    knowledge_rows: np.ndarray | None = None,
) -> np.ndarray:
    """Concatenate per-segment L2-normalized rows: members, then auxiliary,
    then knowledge. All-zero rows inside a segment stay zero."""
    if not member_rows:
        raise EmptyMemberList("fusion needs at least one member segment")
    segments = [np.asarray(seg) for seg in member_rows]
    if auxiliary_rows is not None:
        segments.append(np.asarray(auxiliary_rows))
    if knowledge_rows is not None:
        segments.append(np.asarray(knowledge_rows))
    counts = {seg.shape[0] for seg in segments}
    if len(counts) != 1:
        raise ShapeMismatch(f"fusion segments disagree on row count: {sorted(counts)}")
    return np.concatenate([unit_rows(seg) for seg in segments], axis=1)


def train_fusion_ensemble(
    task_kind: str,
    out_dim: int,
    fused: dict[str, tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    head_kind: str = H.LINEAR,
    hidden_dim: int = 32,
    seed: int = 0,
) -> tuple[Head, TrainHistory, Metric]:
    """Train a fresh head on fused representations; returns (head, history, test metric)."""
    train_x, _ = fused["train"]
    head = H.init_head(head_kind, train_x.shape[1], out_dim, task_kind, seed, hidden_dim)
    trained, history = H.train_head(head, fused["train"], fused["validation"], config)
    metric = H.evaluate(trained, *fused["test"])
    return trained, history, metric

"""Task heads over frozen embeddings: init, forward, loss, training, checkpoints.

Parameters live in float64 while training so analytic gradients match
finite differences tightly; checkpoints store float32 on disk.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimMismatch, EmptyBatch, NonFiniteLoss

logger = logging.getLogger(__name__)

LINEAR = "linear"
MLP1 = "mlp1"
CLASSIFICATION = "classification"
REGRESSION = "regression"
ACCURACY = "accuracy"
MSE = "mse"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Softmax inputs are shifted by the row max and floored here so every
# class keeps strictly positive probability.
LOGIT_FLOOR = -60.0
# Per-example log-prob floor; clamped examples contribute zero gradient
# so the analytic gradient stays the exact derivative of the loss.
LOG_PROB_FLOOR = -30.0

_KIND_CODES = {LINEAR: 0, MLP1: 1}
_TASK_CODES = {CLASSIFICATION: 0, REGRESSION: 1}
_HEAD_HEADER = struct.Struct("<4sIBBIII")
HEAD_MAGIC = b"L3HD"
HEAD_VERSION = 1


@dataclass(frozen=True)
class Metric:
    kind: str
    value: float


@dataclass
class Head:
    kind: str
    task_kind: str
    in_dim: int
    out_dim: int
    hidden_dim: int
    params: dict[str, np.ndarray]

    def copy(self) -> "Head":
        return Head(
            kind=self.kind,
            task_kind=self.task_kind,
            in_dim=self.in_dim,
            out_dim=self.out_dim,
            hidden_dim=self.hidden_dim,
            params={k: v.copy() for k, v in self.params.items()},
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    optimizer: str = "adam"
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 5
    early_stop_tolerance: float = 1e-6
    l2_penalty: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs, early_stop_patience must be >= 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def _param_order(head: Head) -> list[str]:
    return ["w", "b"] if head.kind == LINEAR else ["w1", "b1", "w2", "b2"]


def init_head(
    kind: str,
    in_dim: int,
    out_dim: int,
    task_kind: str,
    seed: int,
    hidden_dim: int = 32,
) -> Head:
    """Glorot-uniform weights, zero biases, from np.random.default_rng(seed)."""
    if kind not in _KIND_CODES:
        raise ValueError(f"unknown head kind '{kind}'")
    if task_kind not in _TASK_CODES:
        raise ValueError(f"unknown task kind '{task_kind}'")
    if in_dim < 1 or out_dim < 1:
        raise ValueError("in_dim and out_dim must be >= 1")
    if task_kind == REGRESSION and out_dim != 1:
        raise ValueError("regression heads have out_dim == 1")
    rng = np.random.default_rng(seed)

    def glorot(n_out: int, n_in: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_out, n_in))

    if kind == LINEAR:
        params = {"w": glorot(out_dim, in_dim), "b": np.zeros(out_dim)}
        hidden_dim = 0
    else:
        if hidden_dim < 1:
            raise ValueError("mlp1 needs hidden_dim >= 1")
        params = {
            "w1": glorot(hidden_dim, in_dim),
            "b1": np.zeros(hidden_dim),
            "w2": glorot(out_dim, hidden_dim),
            "b2": np.zeros(out_dim),
        }
    return Head(kind=kind, task_kind=task_kind, in_dim=in_dim, out_dim=out_dim, hidden_dim=hidden_dim, params=params)


def param_count(head: Head) -> int:
    return int(sum(v.size for v in head.params.values()))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    shifted = np.maximum(shifted, LOGIT_FLOOR)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _forward_cache(head: Head, x: np.ndarray) -> dict:
    p = head.params
    cache: dict = {"x": x}
    if head.kind == LINEAR:
        out = x @ p["w"].T + p["b"]
    else:
        hidden = np.tanh(x @ p["w1"].T + p["b1"])
        out = hidden @ p["w2"].T + p["b2"]
        cache["hidden"] = hidden
    cache["out"] = out
    if head.task_kind == CLASSIFICATION:
        cache["probs"] = _softmax(out)
    return cache


def forward(head: Head, x: np.ndarray):
    """Class probabilities for classification, raw predictions for regression.

    Accepts a single vector or a batch; a single vector gives a single
    probability row or a plain float.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != head.in_dim:
        raise DimMismatch(f"head expects dim {head.in_dim}, got {batch.shape[1]}")
    cache = _forward_cache(head, batch)
    if head.task_kind == CLASSIFICATION:
        probs = cache["probs"]
        return probs[0] if single else probs
    preds = cache["out"][:, 0]
    return float(preds[0]) if single else preds


def _check_batch(head: Head, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"expected a 2-d batch, got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyBatch("batch has zero examples")
    if x.shape[1] != head.in_dim:
        raise DimMismatch(f"head expects dim {head.in_dim}, got {x.shape[1]}")
    if head.task_kind == CLASSIFICATION:
        y = np.asarray(y, dtype=np.int64)
        if y.min() < 0 or y.max() >= head.out_dim:
            raise ValueError(f"labels outside 0..{head.out_dim - 1}")
    else:
        y = np.asarray(y, dtype=np.float64)
    if y.shape != (x.shape[0],):
        raise DimMismatch(f"labels shape {y.shape} does not match batch of {x.shape[0]}")
    return x, y


def _weight_keys(head: Head) -> list[str]:
    return ["w"] if head.kind == LINEAR else ["w1", "w2"]


def loss(head: Head, x: np.ndarray, y: np.ndarray, l2_penalty: float = 0.0) -> float:
    x, y = _check_batch(head, x, y)
    cache = _forward_cache(head, x)
    n = x.shape[0]
    if head.task_kind == CLASSIFICATION:
        logp = np.log(cache["probs"][np.arange(n), y])
        value = -float(np.mean(np.maximum(logp, LOG_PROB_FLOOR)))
    else:
        residual = cache["out"][:, 0] - y
        value = float(np.mean(residual * residual))
    if l2_penalty:
        value += l2_penalty * float(sum(np.sum(head.params[k] ** 2) for k in _weight_keys(head)))
    return value


def gradient(head: Head, x: np.ndarray, y: np.ndarray, l2_penalty: float = 0.0) -> dict[str, np.ndarray]:
    """Analytic gradient of loss() with the same clamping behavior."""
    x, y = _check_batch(head, x, y)
    cache = _forward_cache(head, x)
    n = x.shape[0]
    if head.task_kind == CLASSIFICATION:
        probs = cache["probs"]
        grad_out = probs.copy()
        grad_out[np.arange(n), y] -= 1.0
        logp = np.log(probs[np.arange(n), y])
        grad_out[logp <= LOG_PROB_FLOOR] = 0.0
        grad_out /= n
    else:
        grad_out = (2.0 / n) * (cache["out"][:, 0] - y)[:, None]

    p = head.params
    grads: dict[str, np.ndarray] = {}
    if head.kind == LINEAR:
        grads["w"] = grad_out.T @ x
        grads["b"] = grad_out.sum(axis=0)
    else:
        hidden = cache["hidden"]
        grads["w2"] = grad_out.T @ hidden
        grads["b2"] = grad_out.sum(axis=0)
        grad_hidden = (grad_out @ p["w2"]) * (1.0 - hidden * hidden)
        grads["w1"] = grad_hidden.T @ x
        grads["b1"] = grad_hidden.sum(axis=0)
    if l2_penalty:
        for key in _weight_keys(head):
            grads[key] += 2.0 * l2_penalty * p[key]
    return grads


def evaluate(head: Head, x: np.ndarray, y: np.ndarray) -> Metric:
    """Accuracy for classification; MSE with predictions clipped to [0,1]."""
    x, y = _check_batch(head, x, y)
    cache = _forward_cache(head, x)
    if head.task_kind == CLASSIFICATION:
        picks = np.argmax(cache["probs"], axis=1)
        return Metric(kind=ACCURACY, value=float(np.mean(picks == y)))
    preds = np.clip(cache["out"][:, 0], 0.0, 1.0)
    return Metric(kind=MSE, value=float(np.mean((preds - y) ** 2)))


def metric_from_predictions(predictions: np.ndarray, y: np.ndarray, task_kind: str) -> Metric:
    """Same metrics as evaluate(), for already-computed model outputs."""
    if task_kind == CLASSIFICATION:
        picks = np.argmax(np.asarray(predictions), axis=1)
        return Metric(kind=ACCURACY, value=float(np.mean(picks == np.asarray(y, dtype=np.int64))))
    preds = np.clip(np.asarray(predictions, dtype=np.float64), 0.0, 1.0)
    return Metric(kind=MSE, value=float(np.mean((preds - np.asarray(y, dtype=np.float64)) ** 2)))


def _adam_step(params, grads, state, lr):
    state["t"] += 1
    t = state["t"]
    for key, grad in grads.items():
        m = state["m"][key]
        v = state["v"][key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train_head(
    head: Head,
    train: tuple[np.ndarray, np.ndarray],
    validation: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
) -> tuple[Head, TrainHistory]:
    """Mini-batch training with per-epoch reshuffling and early stopping.

    Stops once validation loss has improved by less than the tolerance for
    `early_stop_patience` consecutive epochs, and returns the parameters
    from the best validation epoch, not the last one.
    """
    config.validate()
    train_x, train_y = _check_batch(head, *train)
    val_x, val_y = _check_batch(head, *validation)

    work = head.copy()
    rng = np.random.default_rng(config.seed)
    state = {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in work.params.items()},
        "v": {k: np.zeros_like(v) for k, v in work.params.items()},
    }
    history = TrainHistory()
    best_val = np.inf
    best_params = {k: v.copy() for k, v in work.params.items()}
    best_epoch = 0
    stale = 0
    n = train_x.shape[0]

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            grads = gradient(work, train_x[idx], train_y[idx], config.l2_penalty)
            if any(not np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(epoch, batch_index)
            if config.optimizer == "adam":
                _adam_step(work.params, grads, state, config.learning_rate)
            else:
                for key, grad in grads.items():
                    work.params[key] -= config.learning_rate * grad
            if any(not np.all(np.isfinite(v)) for v in work.params.values()):
                raise NonFiniteLoss(epoch, batch_index)

        epoch_train = loss(work, train_x, train_y, config.l2_penalty)
        epoch_val = loss(work, val_x, val_y)
        if not (np.isfinite(epoch_train) and np.isfinite(epoch_val)):
            raise NonFiniteLoss(epoch, -1)
        history.train_loss.append(epoch_train)
        history.val_loss.append(epoch_val)
        history.val_metric.append(evaluate(work, val_x, val_y).value)
        history.stopped_epoch = epoch

        if best_val - epoch_val >= config.early_stop_tolerance:
            best_val = epoch_val
            best_params = {k: v.copy() for k, v in work.params.items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break

    history.best_epoch = best_epoch
    result = work.copy()
    result.params = best_params
    return result, history


def save_head(head: Head, path: str | Path) -> Path:
    """Binary checkpoint: L3HD header then float32 parameters in fixed order."""
    path = Path(path)
    header = _HEAD_HEADER.pack(
        HEAD_MAGIC,
        HEAD_VERSION,
        _KIND_CODES[head.kind],
        _TASK_CODES[head.task_kind],
        head.in_dim,
        head.out_dim,
        head.hidden_dim,
    )
    payload = b"".join(np.ascontiguousarray(head.params[k], dtype="<f4").tobytes() for k in _param_order(head))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload)
    return path


def _expected_shapes(kind: str, in_dim: int, out_dim: int, hidden_dim: int) -> list[tuple[str, tuple[int, ...]]]:
    if kind == LINEAR:
        return [("w", (out_dim, in_dim)), ("b", (out_dim,))]
    return [
        ("w1", (hidden_dim, in_dim)),
        ("b1", (hidden_dim,)),
        ("w2", (out_dim, hidden_dim)),
        ("b2", (out_dim,)),
    ]


def load_head(path: str | Path) -> Head:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEAD_HEADER.size:
        raise CheckpointError(f"{path}: shorter than the {_HEAD_HEADER.size}-byte header")
    magic, version, kind_code, task_code, in_dim, out_dim, hidden_dim = _HEAD_HEADER.unpack_from(raw, 0)
    if magic != HEAD_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != HEAD_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    tasks = {v: k for k, v in _TASK_CODES.items()}
    if kind_code not in kinds or task_code not in tasks:
        raise CheckpointError(f"{path}: unknown kind/task codes {kind_code}/{task_code}")
    kind, task_kind = kinds[kind_code], tasks[task_code]
    shapes = _expected_shapes(kind, in_dim, out_dim, hidden_dim)
    total = sum(int(np.prod(s)) for _, s in shapes)
    if len(raw) - _HEAD_HEADER.size != total * 4:
        raise CheckpointError(f"{path}: payload is {len(raw) - _HEAD_HEADER.size} bytes, expected {total * 4}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEAD_HEADER.size).astype(np.float64)
    params: dict[str, np.ndarray] = {}
    cursor = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        params[name] = flat[cursor : cursor + size].reshape(shape).copy()
        cursor += size
    return Head(kind=kind, task_kind=task_kind, in_dim=in_dim, out_dim=out_dim, hidden_dim=hidden_dim, params=params)

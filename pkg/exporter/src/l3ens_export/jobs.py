"""Export job descriptions.

``ExportJob`` drives a local transformer encoder; ``ApiExportJob`` drives a
remote embedding endpoint. ``pooling`` deliberately has no default: how a
sentence vector is pooled from token states changes the output, so the
caller must say which one they mean. API providers pool server-side, which
is why the API job has no pooling field at all.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidJob

POOLINGS = ("cls", "mean")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidJob(message)


@dataclass(frozen=True)
class ExportJob:
    """One export through a local encoder (a model directory or hub name)."""

    model: str
    pooling: str
    input_path: str
    split: str
    batch_size: int
    output_path: str

    def validate(self) -> None:
        _require(bool(self.model), "model identifier must be non-empty")
        _require(
            self.pooling in POOLINGS,
            f"pooling must be one of {'/'.join(POOLINGS)}, got '{self.pooling}'",
        )
        _require(bool(self.input_path), "input path must be non-empty")
        _require(bool(self.output_path), "output path must be non-empty")
        _require(
            isinstance(self.batch_size, int) and self.batch_size >= 1,
            f"batch size must be a positive integer, got {self.batch_size!r}",
        )


@dataclass(frozen=True)
class ApiExportJob:
    """One export through a remote embedding endpoint."""

    model: str
    url: str
    input_path: str
    split: str
    batch_size: int
    output_path: str
    api_key: str | None = None
    cache_dir: str | None = None
    max_retries: int = 3

    def validate(self) -> None:
        _require(bool(self.model), "model identifier must be non-empty")
        _require(bool(self.url), "endpoint url must be non-empty")
        _require(bool(self.input_path), "input path must be non-empty")
        _require(bool(self.output_path), "output path must be non-empty")
        _require(
            isinstance(self.batch_size, int) and self.batch_size >= 1,
            f"batch size must be a positive integer, got {self.batch_size!r}",
        )
        _require(self.max_retries >= 0, f"max_retries must be >= 0, got {self.max_retries}")

"""Exception types shared across the package."""
from __future__ import annotations


class L3Error(Exception):
    """Base class for all errors raised by this package."""


class EmbeddingStoreError(L3Error):
    """Problem reading, writing, or validating an embedding file."""

    def __init__(self, message: str, *, path: str | None = None, offset: int | None = None):
        self.path = path
        self.offset = offset
        where = ""
        if path is not None:
            where = f" [{path}" + (f" @ byte {offset}]" if offset is not None else "]")
        super().__init__(message + where)


class BadMagic(EmbeddingStoreError):
    pass


class VersionMismatch(EmbeddingStoreError):
    pass


class DigestMismatch(EmbeddingStoreError):
    pass


class MissingManifest(EmbeddingStoreError):
    pass


class ManifestMismatch(EmbeddingStoreError):
    pass


class NonFiniteValue(EmbeddingStoreError):
    pass


class DimZero(EmbeddingStoreError):
    pass


class IoFailure(EmbeddingStoreError):
    pass


class MissingEmbedding(L3Error):
    """One or more example ids have no row in the embedding matrix."""

    def __init__(self, missing_ids: list[str], source_name: str = ""):
        self.missing_ids = list(missing_ids)
        self.source_name = source_name
        shown = ", ".join(self.missing_ids[:8])
        if len(self.missing_ids) > 8:
            shown += f", ... ({len(self.missing_ids)} total)"
        src = f" in source '{source_name}'" if source_name else ""
        super().__init__(f"no embedding row{src} for ids: {shown}")


class DimMismatch(L3Error):
    pass


class EmptyBatch(L3Error):
    pass


class NonFiniteLoss(L3Error):
    """Training produced a NaN or infinite value; carries where it happened."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss or gradient at epoch {epoch}, batch {batch}")


class CheckpointError(L3Error):
    """Head checkpoint bytes are malformed or inconsistent."""


class SharedHeadShapeMismatch(L3Error):
    """Tasks in a shared-head sequence disagree on dimensions or metric kind."""


class MetricKindMismatch(L3Error):
    """Transfer arithmetic was asked to mix incompatible metric kinds."""


class EmptyMemberList(L3Error):
    pass


class ShapeMismatch(L3Error):
    """Member predictions, weights, or fusion segments disagree on shape."""


class MissingField(L3Error):
    """A result record lacks a field the report column needs."""


class UnknownEntity(L3Error):
    """A mention references an entity id the knowledge base does not hold."""


class OrphanEntity(L3Error):
    """A knowledge-base label row has no vector row (or vice versa)."""

    def __init__(self, entity_ids: list[str]):
        self.entity_ids = list(entity_ids)
        super().__init__(f"knowledge base entries without matching vectors: {', '.join(entity_ids[:8])}")


class ConfigValidationError(L3Error):
    """Carries every violation found in a config file, not just the first."""

    def __init__(self, violations: list):
        self.violations = list(violations)
        lines = "\n".join(f"  {v.location}: {v.message}" for v in self.violations)
        super().__init__(f"{len(self.violations)} config violation(s):\n{lines}")

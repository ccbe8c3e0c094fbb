"""End-to-end export: corpus in, L3EM file plus manifest out.

The binary and its sidecar are written by the engine package itself, so
anything produced here is loadable by construction; the sidecar is then
extended with provenance the engine does not care about (the exact model
identifier, the pooling, and which records were too long). Records that
overflow the encoder's context window do not abort the export: their rows
are left as zeros and their ids are flagged in the manifest.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from l3ens import EmbeddingMatrix, store_embeddings
from l3ens.embedding_store import manifest_path_for

from .errors import DatasetError
from .jobs import ApiExportJob, ExportJob
from .records import read_records

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExportResult:
    output_path: str
    source_name: str
    count: int
    dim: int
    over_limit_ids: tuple[str, ...]


def build_encoder(job):
    """Pick the encoder a job calls for; imports stay lazy so API-only
    installs never touch torch."""
    if isinstance(job, ApiExportJob):
        from .api import ApiEncoder

        return ApiEncoder(
            model=job.model,
            url=job.url,
            api_key=job.api_key,
            max_retries=job.max_retries,
            cache_dir=job.cache_dir,
        )
    from .encoders import HFEncoder

    return HFEncoder(job.model, job.pooling)


def export_embeddings(job, *, encoder=None) -> ExportResult:
    """Run one job and return what was written; see the module docstring
    for the overflow policy."""
    job.validate()
    records = read_records(job.input_path)
    if encoder is None:
        encoder = build_encoder(job)

    fit_flags = [encoder.fits(r) for r in records]
    fitting = [r for r, ok in zip(records, fit_flags) if ok]
    over_limit = tuple(r.id for r, ok in zip(records, fit_flags) if not ok)
    for rid in over_limit:
        logger.warning("record '%s' exceeds the token limit; emitting a zero row", rid)

    vectors = encoder.encode(fitting, job.batch_size) if fitting else None
    if encoder.dim is None or encoder.dim < 1:
        raise DatasetError(
            "embedding dim unknown: the input is empty and the encoder declares no dim"
        )

    rows = np.zeros((len(records), encoder.dim), dtype=np.float32)
    if vectors is not None:
        skipped = set(over_limit)
        keep = [i for i, r in enumerate(records) if r.id not in skipped]
        rows[keep] = vectors

    matrix = EmbeddingMatrix(
        source_name=encoder.source_name,
        dim=encoder.dim,
        ids=tuple(r.id for r in records),
        rows=rows,
    )
    manifest = store_embeddings(
        matrix,
        job.output_path,
        dataset_name=Path(job.input_path).stem,
        split_name=job.split,
    )
    _extend_manifest(job, encoder, over_limit)
    logger.info(
        "wrote %d x %d rows to %s (source '%s')", matrix.count, matrix.dim, job.output_path, matrix.source_name
    )
    return ExportResult(
        output_path=str(job.output_path),
        source_name=matrix.source_name,
        count=matrix.count,
        dim=matrix.dim,
        over_limit_ids=over_limit,
    )


def _extend_manifest(job, encoder, over_limit: tuple[str, ...]) -> None:
    # provenance keys ride along in the sidecar; the engine's loader only
    # requires its own keys to be present, extras pass through untouched
    path = manifest_path_for(job.output_path)
    data = json.loads(path.read_text())
    data["model"] = job.model
    if isinstance(job, ApiExportJob):
        data["channel"] = "api"
        data["endpoint"] = job.url
    else:
        data["pooling"] = job.pooling
    data["token_limit_exceeded"] = list(over_limit)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)

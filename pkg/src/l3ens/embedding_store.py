"""Storage, validation, and alignment for frozen embedding matrices.

File layout (all little-endian): magic ``L3EM``, version u32, dim u32,
count u64, then count*dim IEEE-754 float32 values in row-major order, so
the header is exactly 20 bytes. A sidecar manifest ``<path>.manifest.json``
records the row ids and a SHA-256 digest of the complete binary file;
loading verifies the digest before trusting anything else.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DigestMismatch,
    DimZero,
    IoFailure,
    ManifestMismatch,
    MissingEmbedding,
    MissingManifest,
    NonFiniteValue,
    VersionMismatch,
)
from .text import tokenize

logger = logging.getLogger(__name__)

MAGIC = b"L3EM"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
HEADER_SIZE = _HEADER.size  # 20 bytes

_MANIFEST_KEYS = ("source_name", "dataset_name", "split_name", "dim", "count", "ids", "content_digest")


@dataclass
class EmbeddingMatrix:
    """A frozen (count, dim) float32 matrix with one string id per row."""

    source_name: str
    dim: int
    ids: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self._index: dict[str, int] | None = None

    @property
    def count(self) -> int:
        return len(self.ids)

    def index(self) -> dict[str, int]:
        if self._index is None:
            self._index = {eid: i for i, eid in enumerate(self.ids)}
        return self._index

    def row_for(self, example_id: str) -> np.ndarray:
        return self.rows[self.index()[example_id]]

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("embedding dim must be >= 1")
        if self.rows.shape != (len(self.ids), self.dim):
            raise ValueError(f"rows shape {self.rows.shape} does not match ({len(self.ids)}, {self.dim})")
        if self.rows.dtype != np.float32:
            raise ValueError(f"rows must be float32, got {self.rows.dtype}")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("row ids must be unique")
        if not np.all(np.isfinite(self.rows)):
            bad = int(np.argwhere(~np.isfinite(self.rows))[0][0])
            raise ValueError(f"non-finite value in row {bad}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.source_name == other.source_name
            and self.dim == other.dim
            and self.ids == other.ids
            and self.rows.shape == other.rows.shape
            and self.rows.tobytes() == other.rows.tobytes()
        )


@dataclass(frozen=True)
class EmbeddingManifest:
    source_name: str
    dataset_name: str
    split_name: str
    dim: int
    count: int
    ids: tuple[str, ...]
    content_digest: str

    def to_dict(self) -> dict:
        return {
            "source_name": self.source_name,
            "dataset_name": self.dataset_name,
            "split_name": self.split_name,
            "dim": self.dim,
            "count": self.count,
            "ids": list(self.ids),
            "content_digest": self.content_digest,
        }


@dataclass(frozen=True)
class AlignedView:
    """Embedding rows reordered to match a dataset split, plus labels."""

    ids: tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray


def manifest_path_for(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def store_embeddings(
    matrix: EmbeddingMatrix,
    path: str | Path,
    dataset_name: str = "",
    split_name: str = "",
) -> EmbeddingManifest:
    """Write the binary file and its manifest sidecar; returns the manifest."""
    matrix.validate()
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, matrix.dim, matrix.count)
    payload = np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes()
    blob = header + payload
    digest = hashlib.sha256(blob).hexdigest()
    manifest = EmbeddingManifest(
        source_name=matrix.source_name,
        dataset_name=dataset_name,
        split_name=split_name,
        dim=matrix.dim,
        count=matrix.count,
        ids=matrix.ids,
        content_digest=digest,
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
        manifest_path_for(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"could not write embedding file: {exc}", path=str(path)) from exc
    return manifest


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read and fully validate an embedding file plus its manifest."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"could not read embedding file: {exc}", path=str(path)) from exc

    if len(raw) < HEADER_SIZE:
        raise BadMagic("file shorter than the 20-byte header", path=str(path), offset=0)
    magic, version, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}", path=str(path), offset=0)
    if version != VERSION:
        raise VersionMismatch(f"expected version {VERSION}, found {version}", path=str(path), offset=4)
    if dim == 0:
        raise DimZero("dim field is zero", path=str(path), offset=8)

    mpath = manifest_path_for(path)
    if not mpath.exists():
        raise MissingManifest(f"manifest sidecar not found: {mpath}", path=str(path))
    try:
        mdata = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestMismatch(f"manifest unreadable: {exc}", path=str(path)) from exc
    for key in _MANIFEST_KEYS:
        if key not in mdata:
            raise ManifestMismatch(f"manifest missing key '{key}'", path=str(path))

    digest = hashlib.sha256(raw).hexdigest()
    if digest != mdata["content_digest"]:
        raise DigestMismatch(
            f"content digest {digest} does not match manifest {mdata['content_digest']}",
            path=str(path),
        )
    if mdata["dim"] != dim or mdata["count"] != count:
        raise ManifestMismatch(
            f"manifest says dim={mdata['dim']} count={mdata['count']}, header says dim={dim} count={count}",
            path=str(path),
        )
    ids = tuple(str(x) for x in mdata["ids"])
    if len(ids) != count:
        raise ManifestMismatch(f"manifest lists {len(ids)} ids for count={count}", path=str(path))
    if len(set(ids)) != len(ids):
        raise ManifestMismatch("manifest ids are not unique", path=str(path))

    expected_payload = count * dim * 4
    if len(raw) - HEADER_SIZE != expected_payload:
        raise ManifestMismatch(
            f"payload holds {len(raw) - HEADER_SIZE} bytes, header implies {expected_payload}",
            path=str(path),
            offset=HEADER_SIZE,
        )

    rows = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE, count=count * dim).reshape(count, dim).copy()
    finite = np.isfinite(rows)
    if not finite.all():
        flat = int(np.argwhere(~finite.ravel())[0][0])
        raise NonFiniteValue(
            f"non-finite value in row {flat // dim}",
            path=str(path),
            offset=HEADER_SIZE + flat * 4,
        )
    return EmbeddingMatrix(source_name=mdata["source_name"], dim=dim, ids=ids, rows=rows)


def _token_slot(token: str, dim: int, seed: int) -> tuple[int, int]:
    """Hash one token to a (bucket index, +1/-1 sign) pair."""
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9, key=key).digest()
    index = int.from_bytes(digest[:8], "little") % dim
    sign = 1 if digest[8] & 1 else -1
    return index, sign


def hash_encode(
    texts: list[str],
    dim: int,
    seed: int,
    ids: list[str] | None = None,
    source_name: str | None = None,
) -> EmbeddingMatrix:
    """Deterministic feature-hashing encoder: signed token buckets, L2-normalized.

    A text with no tokens keeps its all-zero row rather than dividing by zero.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rows = np.zeros((len(texts), dim), dtype=np.float64)
    for r, text in enumerate(texts):
        for token in tokenize(text):
            index, sign = _token_slot(token, dim, seed)
            rows[r, index] += sign
    norms = np.linalg.norm(rows, axis=1)
    nonzero = norms > 0.0
    rows[nonzero] /= norms[nonzero, None]
    if ids is None:
        ids = [str(i) for i in range(len(texts))]
    if source_name is None:
        source_name = f"hash{dim}s{seed}"
    return EmbeddingMatrix(source_name=source_name, dim=dim, ids=tuple(ids), rows=rows.astype(np.float32))


def unit_rows(rows: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization in float64; all-zero rows stay zero."""
    out = np.asarray(rows, dtype=np.float64).copy()
    norms = np.linalg.norm(out, axis=1)
    nonzero = norms > 0.0
    out[nonzero] /= norms[nonzero, None]
    return out


def align(dataset, matrix: EmbeddingMatrix, split: str | None = None) -> AlignedView:
    """Pick and order matrix rows by a dataset split's example ids.

    Raises MissingEmbedding naming every absent id, not just the first.
    """
    wanted = dataset.split_ids(split) if split is not None else dataset.ids()
    index = matrix.index()
    missing = [eid for eid in wanted if eid not in index]
    if missing:
        raise MissingEmbedding(missing, matrix.source_name)
    positions = [index[eid] for eid in wanted]
    rows = matrix.rows[positions].copy()
    labels = dataset.labels_for(wanted)
    return AlignedView(ids=tuple(wanted), rows=rows, labels=labels)

"""Knowledge bases: entity aliases, greedy longest-match linking, pooling.

Labels live in a UTF-8 TSV (entity_id, canonical label, pipe-separated
aliases); vectors live in a standard embedding file whose row ids are
entity ids. Linking works on the shared tokenizer so text and aliases
can never disagree on word boundaries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding_store import EmbeddingMatrix, load_embeddings
from .errors import OrphanEntity, UnknownEntity
from .text import tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EntityRecord:
    id: str
    label: str
    aliases: tuple[str, ...]


@dataclass(frozen=True)
class Mention:
    entity_id: str
    start: int  # token index, inclusive
    end: int  # token index, exclusive
    phrase: str


@dataclass
class KnowledgeBase:
    entities: dict[str, EntityRecord]
    vectors: EmbeddingMatrix
    alias_index: dict[tuple[str, ...], str]
    max_alias_len: int

    @property
    def dim(self) -> int:
        return self.vectors.dim

    def vector_for(self, entity_id: str) -> np.ndarray:
        if entity_id not in self.entities:
            raise UnknownEntity(f"entity '{entity_id}' is not in the knowledge base")
        return self.vectors.row_for(entity_id)


def build_knowledge_base(entries: list[EntityRecord], vectors: EmbeddingMatrix) -> KnowledgeBase:
    """Index aliases for matching; a duplicate alias goes to the smaller entity id."""
    have_vectors = set(vectors.ids)
    have_labels = {e.id for e in entries}
    orphans = sorted(have_labels - have_vectors) + sorted(have_vectors - have_labels)
    if orphans:
        raise OrphanEntity(orphans)

    alias_index: dict[tuple[str, ...], str] = {}
    for entry in entries:
        for alias in (entry.label, *entry.aliases):
            tokens = tuple(tokenize(alias))
            if not tokens:
                logger.warning("alias '%s' of entity '%s' has no tokens, skipping", alias, entry.id)
                continue
            owner = alias_index.get(tokens)
            if owner is not None and owner != entry.id:
                keep = min(owner, entry.id)
                logger.warning("alias '%s' claimed by '%s' and '%s'; keeping '%s'", alias, owner, entry.id, keep)
                alias_index[tokens] = keep
                continue
            alias_index[tokens] = entry.id
    max_len = max((len(t) for t in alias_index), default=0)
    return KnowledgeBase(entities={e.id: e for e in entries}, vectors=vectors, alias_index=alias_index, max_alias_len=max_len)


def parse_labels_tsv(path: str | Path) -> list[EntityRecord]:
    """Rows: entity_id <TAB> canonical_label <TAB> alias1|alias2|... (aliases optional)."""
    entries: list[EntityRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: need entity_id<TAB>label[<TAB>aliases]")
            aliases: tuple[str, ...] = ()
            if len(parts) >= 3 and parts[2]:
                aliases = tuple(a for a in parts[2].split("|") if a)
            entries.append(EntityRecord(id=parts[0], label=parts[1], aliases=aliases))
    if len({e.id for e in entries}) != len(entries):
        raise ValueError(f"{path}: duplicate entity ids")
    return entries


def load_kb(labels_path: str | Path, vectors_path: str | Path) -> KnowledgeBase:
    return build_knowledge_base(parse_labels_tsv(labels_path), load_embeddings(vectors_path))


def link_entities(text: str, kb: KnowledgeBase) -> list[Mention]:
    """Greedy longest-match linking over token spans.

    Longer aliases are matched first, left to right; tokens inside an
    accepted mention are consumed and cannot join another mention.
    """
    tokens = tokenize(text)
    consumed = [False] * len(tokens)
    mentions: list[Mention] = []
    for length in range(min(kb.max_alias_len, len(tokens)), 0, -1):
        for start in range(0, len(tokens) - length + 1):
            end = start + length
            if any(consumed[start:end]):
                continue
            span = tuple(tokens[start:end])
            entity_id = kb.alias_index.get(span)
            if entity_id is None:
                continue
            for i in range(start, end):
                consumed[i] = True
            mentions.append(Mention(entity_id=entity_id, start=start, end=end, phrase=" ".join(span)))
    mentions.sort(key=lambda m: m.start)
    return mentions


def knowledge_vector(mentions: list[Mention], kb: KnowledgeBase) -> np.ndarray:
    """Arithmetic mean of the mentioned entity vectors; no mentions → zeros.

    Repeats of a single entity pool to exactly that entity's vector, so
    pooling is reproduction-exact in the one-entity case.
    """
    if not mentions:
        return np.zeros(kb.dim, dtype=np.float64)
    ids = [m.entity_id for m in mentions]
    if len(set(ids)) == 1:
        return np.asarray(kb.vector_for(ids[0]), dtype=np.float64).copy()
    stack = np.stack([np.asarray(kb.vector_for(i), dtype=np.float64) for i in ids])
    return stack.mean(axis=0)


def knowledge_rows(texts: list[str], kb: KnowledgeBase) -> tuple[np.ndarray, int]:
    """Knowledge vector per text plus how many texts had zero coverage."""
    rows = np.zeros((len(texts), kb.dim), dtype=np.float64)
    misses = 0
    for i, text in enumerate(texts):
        row = knowledge_vector(link_entities(text, kb), kb)
        if not row.any():
            misses += 1
        rows[i] = row
    if misses:
        logger.info("knowledge coverage: %d of %d texts had no linked entity", misses, len(texts))
    return rows, misses


def coverage(text: str, kb: KnowledgeBase) -> tuple[int, int]:
    """(covered token count, total token count) for one text."""
    tokens = tokenize(text)
    covered = sum(m.end - m.start for m in link_entities(text, kb))
    return covered, len(tokens)

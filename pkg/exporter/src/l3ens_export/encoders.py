"""Frozen transformer encoders.

Token states come from a pretrained model in eval mode under no_grad, then
one vector per record is pooled out: ``cls`` takes the first-token state,
``mean`` averages token states weighted by the attention mask so padding
never leaks into the result. Exports must be reproducible run to run, so
the encoder pins the CPU thread count; at the scale this package targets
the speed cost is noise.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .errors import ModelUnavailable, TokenLimitExceeded
from .records import Record

logger = logging.getLogger(__name__)

# tokenizers report int(1e30) when no limit was configured; treat anything
# that silly as "no declared limit"
_UNSET_LIMIT = 1_000_000


class HFEncoder:
    """Sentence vectors from a local or hub transformer checkpoint."""

    def __init__(self, model_id: str, pooling: str):
        if pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling '{pooling}'")
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ModelUnavailable(
                f"transformer encoders need the 'hf' extra (torch + transformers): {exc}"
            ) from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            self.model = AutoModel.from_pretrained(model_id)
        except (OSError, ValueError) as exc:
            raise ModelUnavailable(f"cannot load encoder '{model_id}': {exc}") from exc
        self.model.eval()
        torch.set_num_threads(1)  # reproducibility of reductions beats a minor speed win here
        self._torch = torch
        self.model_id = model_id
        self.pooling = pooling
        self.dim: int = int(self.model.config.hidden_size)
        self.max_tokens = self._token_limit()
        self.source_name = f"{Path(model_id).name}:{pooling}"
        logger.info("loaded '%s': dim=%d, token limit=%s", model_id, self.dim, self.max_tokens)

    def _token_limit(self) -> int | None:
        declared = getattr(self.tokenizer, "model_max_length", None)
        positions = getattr(self.model.config, "max_position_embeddings", None)
        limits = [v for v in (declared, positions) if isinstance(v, int) and 0 < v < _UNSET_LIMIT]
        return min(limits) if limits else None

    def token_count(self, record: Record) -> int:
        ids = self.tokenizer(record.text, record.text_pair)["input_ids"]
        return len(ids)

    def fits(self, record: Record) -> bool:
        return self.max_tokens is None or self.token_count(record) <= self.max_tokens

    def encode(self, records: list[Record], batch_size: int) -> np.ndarray:
        """Encode in order, batched; every record must fit the context window."""
        out = np.zeros((len(records), self.dim), dtype=np.float32)
        for start in range(0, len(records), batch_size):
            batch = records[start : start + batch_size]
            out[start : start + len(batch)] = self._encode_batch(batch)
        return out

    def _encode_batch(self, batch: list[Record]) -> np.ndarray:
        out = np.zeros((len(batch), self.dim), dtype=np.float32)
        singles = [(i, r) for i, r in enumerate(batch) if r.text_pair is None]
        pairs = [(i, r) for i, r in enumerate(batch) if r.text_pair is not None]
        for group in (singles, pairs):
            if group:
                positions = [i for i, _ in group]
                out[positions] = self._pooled([r for _, r in group])
        return out

    def _pooled(self, records: list[Record]) -> np.ndarray:
        for rec in records:
            if not self.fits(rec):
                raise TokenLimitExceeded(rec.id, self.token_count(rec), self.max_tokens)
        texts = [r.text for r in records]
        text_pairs = [r.text_pair for r in records] if records[0].text_pair is not None else None
        enc = self.tokenizer(texts, text_pairs, padding=True, return_tensors="pt")
        with self._torch.no_grad():
            hidden = self.model(**enc).last_hidden_state
        if self.pooling == "cls":
            vectors = hidden[:, 0, :]
        else:
            mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            vectors = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return vectors.cpu().numpy().astype(np.float32, copy=False)

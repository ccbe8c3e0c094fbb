"""Client for remote embedding endpoints.

Speaks the common JSON shape: POST ``{"model": ..., "input": [texts]}``,
answer ``{"data": [{"index": i, "embedding": [...]}, ...]}``. Every vector
is cached on disk keyed by (model, text digest), so re-running an export
costs no requests and works offline once warm. Batches may be fetched
concurrently; rows are always assembled in dataset order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import httpx
import numpy as np

from .errors import ApiFailure
from .records import Record

logger = logging.getLogger(__name__)

CACHE_DIR_ENV = "L3ENS_EXPORT_CACHE"
_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def default_cache_dir() -> Path:
    override = os.environ.get(CACHE_DIR_ENV)
    if override:
        return Path(override)
    return Path.home() / ".cache" / "l3ens-export"


def _model_slug(model: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", model) or "model"


def _text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ApiEncoder:
    """Embedding rows from a remote endpoint, with retries and a disk cache."""

    def __init__(
        self,
        model: str,
        url: str,
        api_key: str | None = None,
        dim: int | None = None,
        max_retries: int = 3,
        retry_wait: float = 0.5,
        max_parallel: int = 4,
        cache_dir: str | Path | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model
        self.url = url
        self.api_key = api_key
        self.dim = dim
        self.max_retries = max_retries
        self.retry_wait = retry_wait
        self.max_parallel = max(1, max_parallel)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        self._client = httpx.Client(transport=transport, timeout=60.0)
        self.max_tokens = None  # the provider enforces its own window
        self.source_name = f"{model}:api"
        self.model_id = model
        self.pooling = None

    # -- cache ---------------------------------------------------------------

    def _cache_path(self, text: str) -> Path:
        return self.cache_dir / _model_slug(self.model) / (_text_digest(text) + ".json")

    def _cache_get(self, text: str) -> list[float] | None:
        path = self._cache_path(text)
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            return None

    def _cache_put(self, text: str, vector: list[float]) -> None:
        path = self._cache_path(text)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(vector))
        os.replace(tmp, path)

    # -- transport -----------------------------------------------------------

    def _post_batch(self, texts: list[str]) -> list[list[float]]:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model, "input": texts}
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.retry_wait * (2 ** (attempt - 1)))
            try:
                response = self._client.post(self.url, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"status {response.status_code}"
                logger.warning("embedding request got %d (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code != 200:
                raise ApiFailure(
                    f"endpoint answered {response.status_code}: {response.text[:200]}",
                    retries=attempt,
                )
            return self._parse_batch(response, len(texts), attempt)
        raise ApiFailure(f"endpoint unreachable: {last_error}", retries=self.max_retries)

    def _parse_batch(self, response: httpx.Response, expected: int, attempt: int) -> list[list[float]]:
        try:
            data = response.json()["data"]
            rows = [None] * len(data)
            for i, item in enumerate(data):
                rows[int(item.get("index", i))] = [float(x) for x in item["embedding"]]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ApiFailure(f"malformed endpoint response: {exc}", retries=attempt) from exc
        if len(rows) != expected or any(r is None for r in rows):
            raise ApiFailure(
                f"endpoint returned {len(rows)} vectors for {expected} inputs", retries=attempt
            )
        return rows

    # -- public --------------------------------------------------------------

    def fits(self, record: Record) -> bool:
        return True

    def encode(self, records: list[Record], batch_size: int) -> np.ndarray:
        """Fetch (or recall from cache) one vector per record, in order."""
        texts = [r.as_single_text() for r in records]
        vectors: list[list[float] | None] = [self._cache_get(t) for t in texts]
        missing = [i for i, v in enumerate(vectors) if v is None]

        batches = [missing[s : s + batch_size] for s in range(0, len(missing), batch_size)]
        if batches:
            with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
                fetched = list(pool.map(lambda idx: self._post_batch([texts[i] for i in idx]), batches))
            for idx, rows in zip(batches, fetched):
                for i, vector in zip(idx, rows):
                    vectors[i] = vector
                    self._cache_put(texts[i], vector)

        for i, vector in enumerate(vectors):
            if self.dim is None:
                self.dim = len(vector)
            elif len(vector) != self.dim:
                raise ApiFailure(
                    f"row {records[i].id} has dim {len(vector)}, expected {self.dim}"
                )
        if self.dim is None:
            return np.zeros((0, 0), dtype=np.float32)
        return np.asarray(vectors, dtype=np.float32).reshape(len(records), self.dim)

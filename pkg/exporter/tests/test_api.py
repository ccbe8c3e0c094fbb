import hashlib
import json

import httpx
import numpy as np
import pytest

from l3ens_export.api import ApiEncoder, CACHE_DIR_ENV, default_cache_dir
from l3ens_export.errors import ApiFailure
from l3ens_export.records import Record


def vec_for(text: str, dim: int = 6) -> list[float]:
    digest = hashlib.sha256(text.encode()).digest()
    return [b / 255.0 for b in digest[:dim]]


def make_transport(dim: int = 6, fail_first: int = 0, status: int = 500):
    """Deterministic fake endpoint; returns (transport, call log)."""
    calls = {"count": 0, "bodies": [], "headers": []}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["count"] += 1
        calls["headers"].append(dict(request.headers))
        body = json.loads(request.content)
        calls["bodies"].append(body)
        if calls["count"] <= fail_first:
            return httpx.Response(status, text="try later")
        data = [{"index": i, "embedding": vec_for(t, dim)} for i, t in enumerate(body["input"])]
        return httpx.Response(200, json={"data": data})

    return httpx.MockTransport(handler), calls


def _encoder(tmp_path, transport, **kwargs):
    kwargs.setdefault("retry_wait", 0.0)
    return ApiEncoder(
        model="embedder-1",
        url="https://api.example/embeddings",
        cache_dir=tmp_path / "cache",
        transport=transport,
        **kwargs,
    )


def test_rows_come_back_in_dataset_order(tmp_path):
    transport, calls = make_transport()
    enc = _encoder(tmp_path, transport)
    records = [Record(f"r{i}", f"text number {i}") for i in range(5)]
    rows = enc.encode(records, batch_size=2)
    assert rows.shape == (5, 6)
    assert enc.dim == 6
    for i, rec in enumerate(records):
        np.testing.assert_allclose(rows[i], vec_for(rec.text), atol=1e-7)
    assert calls["count"] == 3  # 2 + 2 + 1


def test_pairs_flatten_before_sending(tmp_path):
    transport, calls = make_transport()
    _encoder(tmp_path, transport).encode([Record("p", "left", "right")], batch_size=1)
    assert calls["bodies"][0]["input"] == ["left\nright"]


def test_api_key_becomes_bearer_header(tmp_path):
    transport, calls = make_transport()
    enc = _encoder(tmp_path, transport, api_key="sk-test")
    enc.encode([Record("a", "x")], batch_size=1)
    assert calls["headers"][0].get("authorization") == "Bearer sk-test"


def test_cache_makes_second_export_free(tmp_path):
    transport, calls = make_transport()
    records = [Record("a", "alpha"), Record("b", "beta")]
    first = _encoder(tmp_path, transport).encode(records, batch_size=2)
    assert calls["count"] == 1
    # a brand-new encoder over the same cache dir answers from disk
    second = _encoder(tmp_path, transport).encode(records, batch_size=2)
    assert calls["count"] == 1
    assert np.array_equal(first, second)
    slug_dir = tmp_path / "cache" / "embedder-1"
    assert len(list(slug_dir.glob("*.json"))) == 2


def test_cache_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(CACHE_DIR_ENV, str(tmp_path / "elsewhere"))
    assert default_cache_dir() == tmp_path / "elsewhere"
    transport, _ = make_transport()
    enc = ApiEncoder(model="m", url="https://api.example/e", transport=transport, retry_wait=0.0)
    enc.encode([Record("a", "x")], batch_size=1)
    assert list((tmp_path / "elsewhere" / "m").glob("*.json"))


def test_retries_then_succeeds(tmp_path):
    transport, calls = make_transport(fail_first=2)
    rows = _encoder(tmp_path, transport, max_retries=3).encode([Record("a", "x")], batch_size=1)
    assert calls["count"] == 3
    np.testing.assert_allclose(rows[0], vec_for("x"), atol=1e-7)


def test_exhausted_retries_report_the_count(tmp_path):
    transport, calls = make_transport(fail_first=99)
    with pytest.raises(ApiFailure) as err:
        _encoder(tmp_path, transport, max_retries=2).encode([Record("a", "x")], batch_size=1)
    assert err.value.retries == 2
    assert calls["count"] == 3  # first try plus two retries


def test_client_error_fails_without_retry(tmp_path):
    transport, calls = make_transport(fail_first=99, status=401)
    with pytest.raises(ApiFailure, match="401"):
        _encoder(tmp_path, transport, max_retries=5).encode([Record("a", "x")], batch_size=1)
    assert calls["count"] == 1


def test_malformed_and_short_responses_fail(tmp_path):
    bad = httpx.MockTransport(lambda req: httpx.Response(200, json={"wrong": []}))
    with pytest.raises(ApiFailure, match="malformed"):
        _encoder(tmp_path, bad).encode([Record("a", "x")], batch_size=1)
    short = httpx.MockTransport(
        lambda req: httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0]}]})
    )
    with pytest.raises(ApiFailure, match="1 vectors for 2"):
        _encoder(tmp_path, short).encode([Record("a", "x"), Record("b", "y")], batch_size=2)


def test_inconsistent_dims_fail(tmp_path):
    transport, _ = make_transport(dim=6)
    enc = _encoder(tmp_path, transport)
    stale = enc._cache_path("x")
    stale.parent.mkdir(parents=True)
    stale.write_text(json.dumps([1.0, 2.0]))  # wrong width planted in the cache
    with pytest.raises(ApiFailure, match="dim"):
        enc.encode([Record("a", "x"), Record("b", "y")], batch_size=2)


def test_parallel_fetches_keep_order(tmp_path):
    transport, calls = make_transport()
    enc = _encoder(tmp_path, transport, max_parallel=4)
    records = [Record(f"r{i}", f"unique {i}") for i in range(12)]
    rows = enc.encode(records, batch_size=1)
    assert calls["count"] == 12
    for i, rec in enumerate(records):
        np.testing.assert_allclose(rows[i], vec_for(rec.text), atol=1e-7)

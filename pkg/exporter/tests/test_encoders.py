import numpy as np
import pytest

from l3ens_export.encoders import HFEncoder
from l3ens_export.errors import ModelUnavailable, TokenLimitExceeded
from l3ens_export.records import Record


@pytest.fixture(scope="module")
def mean_encoder(bert_dir):
    return HFEncoder(bert_dir, "mean")


def test_reports_model_geometry(mean_encoder):
    assert mean_encoder.dim == 32
    assert mean_encoder.max_tokens == 48
    assert mean_encoder.source_name.endswith(":mean")


def test_pooling_matches_hand_computation(bert_dir, mean_encoder):
    """cls must be the first token state, mean the mask-weighted average."""
    import torch

    record = Record("x", "the cat sat")
    enc = mean_encoder.tokenizer(record.text, return_tensors="pt")
    with torch.no_grad():
        hidden = mean_encoder.model(**enc).last_hidden_state[0]
    mask = enc["attention_mask"][0].to(hidden.dtype)
    expected_mean = ((hidden * mask[:, None]).sum(0) / mask.sum()).numpy()
    expected_cls = hidden[0].numpy()

    got_mean = mean_encoder.encode([record], batch_size=1)[0]
    got_cls = HFEncoder(bert_dir, "cls").encode([record], batch_size=1)[0]
    np.testing.assert_allclose(got_mean, expected_mean, atol=1e-6)
    np.testing.assert_allclose(got_cls, expected_cls, atol=1e-6)


def test_identical_texts_give_identical_rows(mean_encoder):
    records = [Record("a", "a dog ran fast"), Record("b", "a dog ran fast")]
    rows = mean_encoder.encode(records, batch_size=2)
    assert np.array_equal(rows[0], rows[1])


def test_padding_does_not_leak_into_mean(mean_encoder):
    """A short text next to a long one must pool the same as alone."""
    short = Record("s", "the cat")
    alone = mean_encoder.encode([short], batch_size=1)[0]
    padded = mean_encoder.encode([short, Record("l", "the cat sat on the mat fast")], batch_size=2)[0]
    np.testing.assert_allclose(padded, alone, atol=1e-5)


def test_pairs_and_singles_batch_together(mean_encoder):
    records = [
        Record("p", "birds sing", "green blue"),
        Record("s", "birds sing"),
    ]
    rows = mean_encoder.encode(records, batch_size=2)
    # the pair sees extra tokens, so it cannot pool to the single's vector
    assert not np.allclose(rows[0], rows[1])
    single = mean_encoder.encode([records[1]], batch_size=1)[0]
    np.testing.assert_allclose(rows[1], single, atol=1e-5)


def test_cls_and_mean_disagree_and_name_themselves(bert_dir):
    record = Record("x", "the cat sat on the mat")
    cls_enc = HFEncoder(bert_dir, "cls")
    mean_enc = HFEncoder(bert_dir, "mean")
    assert cls_enc.source_name != mean_enc.source_name
    assert not np.allclose(
        cls_enc.encode([record], 1)[0], mean_enc.encode([record], 1)[0]
    )


def test_fresh_encoder_reproduces_rows_bit_exactly(bert_dir, mean_encoder):
    records = [Record("a", "the cat sat"), Record("b", "green birds sing", "blue mat")]
    first = mean_encoder.encode(records, batch_size=2)
    second = HFEncoder(bert_dir, "mean").encode(records, batch_size=2)
    assert first.tobytes() == second.tobytes()


def test_token_counting_and_limits(mean_encoder):
    short = Record("s", "the cat")
    long = Record("l", " ".join(["cat"] * 60))
    assert mean_encoder.token_count(short) == 4  # marker tokens included
    assert mean_encoder.fits(short)
    assert not mean_encoder.fits(long)
    with pytest.raises(TokenLimitExceeded) as err:
        mean_encoder.encode([long], batch_size=1)
    assert err.value.record_id == "l"
    assert err.value.limit == 48


def test_unknown_pooling_rejected(bert_dir):
    with pytest.raises(ValueError, match="pooling"):
        HFEncoder(bert_dir, "max")


def test_missing_model_raises_model_unavailable(tmp_path):
    with pytest.raises(ModelUnavailable, match="cannot load encoder"):
        HFEncoder(str(tmp_path / "nowhere"), "mean")

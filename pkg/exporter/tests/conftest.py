"""Shared fixtures: a tiny on-disk transformer checkpoint, a small corpus,
and the acceptance-line hook that prints criterion results in the summary."""
import json
import os

import pytest

# keep the model hub out of the picture: everything under test is local
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "cat", "sat", "on", "mat", "a", "dog", "ran", "fast",
    "birds", "sing", "green", "blue", "##s", "##ing",
]

CORPUS = [
    {"id": "r0", "text": "the cat sat on the mat", "label": 1.0},
    {"id": "r1", "text": "a dog ran fast"},
    {"id": "r2", "text_a": "birds sing", "text_b": "green blue", "label": 0.0},
    {"id": "r3", "text": "the cat sat on the mat"},
    {"id": "r4", "text": "blue birds sing fast"},
    {"id": "r5", "text": "the mat sat"},
]


@pytest.fixture(scope="session")
def bert_dir(tmp_path_factory) -> str:
    """A real BERT-architecture encoder, seeded and saved locally so tests
    run offline; 2 layers x 32 hidden keeps everything fast."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    d = tmp_path_factory.mktemp("tinybert")
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=64,
        max_position_embeddings=48,
        type_vocab_size=2,
    )
    torch.manual_seed(7)
    BertModel(config).save_pretrained(d)
    vocab_file = d / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n")
    BertTokenizerFast(vocab_file=str(vocab_file), model_max_length=48).save_pretrained(d)
    return str(d)


@pytest.fixture(scope="session")
def corpus_path(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("corpus") / "sentences.jsonl"
    path.write_text("".join(json.dumps(rec) + "\n" for rec in CORPUS))
    return str(path)

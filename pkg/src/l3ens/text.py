"""Shared tokenizer so encoders and entity linking agree on word boundaries."""
from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs, in order of appearance."""
    return _TOKEN_RE.findall(text.lower())

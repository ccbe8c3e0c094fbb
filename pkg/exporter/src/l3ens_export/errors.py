"""Exception hierarchy for the export pipeline."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class InvalidJob(ExportError):
    """A job field is missing or out of range; nothing was written."""


class DatasetError(ExportError):
    """The input JSONL is unreadable or malformed."""


class ModelUnavailable(ExportError):
    """The encoder could not be constructed: model files absent, the
    identifier is wrong, or the optional torch/transformers extras are
    not installed."""


class ApiFailure(ExportError):
    """The embedding endpoint never produced a usable response.

    ``retries`` counts the re-attempts made after the first try.
    """

    def __init__(self, message: str, retries: int = 0):
        super().__init__(f"{message} (after {retries} retries)" if retries else message)
        self.retries = retries


class TokenLimitExceeded(ExportError):
    """One record does not fit the encoder's context window."""

    def __init__(self, record_id: str, tokens: int, limit: int):
        super().__init__(f"record '{record_id}' has {tokens} tokens, encoder limit is {limit}")
        self.record_id = record_id
        self.tokens = tokens
        self.limit = limit

"""Embedding exporter: real pretrained encoders (or remote embedding APIs)
in, engine-loadable L3EM files with manifests out."""

from .errors import (
    ApiFailure,
    DatasetError,
    ExportError,
    InvalidJob,
    ModelUnavailable,
    TokenLimitExceeded,
)
from .jobs import ApiExportJob, ExportJob
from .records import Record, read_records
from .export import ExportResult, build_encoder, export_embeddings

__version__ = "0.1.0"

__all__ = [
    "ApiExportJob",
    "ApiFailure",
    "DatasetError",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "InvalidJob",
    "ModelUnavailable",
    "Record",
    "TokenLimitExceeded",
    "build_encoder",
    "export_embeddings",
    "read_records",
    "__version__",
]

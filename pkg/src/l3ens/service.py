"""HTTP service exposing the experiment engine.

The CLI talks to this app in-process by default, so no daemon is needed
for local work; `l3ens serve` hosts the same app over the network.
Paths in requests are interpreted on the machine the app runs on.
"""
from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .benchmarks import write_demo
from .config import validate_config, validate_config_data
from .engine import emit_reports_from_run, encode_file, run_experiment
from .errors import ConfigValidationError, L3Error

logger = logging.getLogger(__name__)


class ViolationModel(BaseModel):
    location: str
    message: str
    kind: str = "invalid_value"


class ValidateRequest(BaseModel):
    path: str | None = None
    config: dict | None = None
    base_dir: str | None = None


class ValidateResponse(BaseModel):
    valid: bool
    violations: list[ViolationModel] = Field(default_factory=list)
    digest: str | None = None


class RunRequest(BaseModel):
    path: str
    out_dir: str | None = None
    seeds: int = 1


class RunResponse(BaseModel):
    ok: bool
    run_dir: str
    run_path: str
    failed_phase: str | None = None
    error: str | None = None


class EncodeRequest(BaseModel):
    input: str
    dim: int
    seed: int = 0
    out: str
    source_name: str | None = None


class EncodeResponse(BaseModel):
    out: str
    manifest: str
    count: int
    dim: int
    content_digest: str


class ReportRequest(BaseModel):
    run_path: str
    out_dir: str | None = None


class ReportResponse(BaseModel):
    files: dict[str, str]


class DemoRequest(BaseModel):
    dir: str
    seed: int = 7


class DemoResponse(BaseModel):
    config_path: str


def _violation_models(violations) -> list[ViolationModel]:
    return [ViolationModel(**v.to_dict()) for v in violations]


def _config_or_422(path: str):
    try:
        return validate_config(path)
    except ConfigValidationError as exc:
        raise HTTPException(
            status_code=422,
            detail={"violations": [v.to_dict() for v in exc.violations]},
        ) from exc


def _runtime_400(exc: Exception):
    logger.error("request failed: %s", exc)
    raise HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}") from exc


def create_app() -> FastAPI:
    app = FastAPI(title="l3ens", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/config/validate", response_model=ValidateResponse)
    def config_validate(req: ValidateRequest) -> ValidateResponse:
        if (req.path is None) == (req.config is None):
            raise HTTPException(status_code=422, detail="need exactly one of 'path' or 'config'")
        if req.path is not None:
            try:
                config = validate_config(req.path)
            except ConfigValidationError as exc:
                return ValidateResponse(valid=False, violations=_violation_models(exc.violations))
            return ValidateResponse(valid=True, digest=config.digest)
        config, violations = validate_config_data(req.config, base_dir=req.base_dir or ".")
        if violations:
            return ValidateResponse(valid=False, violations=_violation_models(violations))
        return ValidateResponse(valid=True, digest=config.digest)

    @app.post("/runs", response_model=RunResponse)
    def runs(req: RunRequest) -> RunResponse:
        config = _config_or_422(req.path)
        if req.seeds < 1:
            raise HTTPException(status_code=422, detail="seeds must be >= 1")
        try:
            outcome = run_experiment(config, out_dir=req.out_dir, seeds=req.seeds)
        except (L3Error, OSError) as exc:
            _runtime_400(exc)
        return RunResponse(
            ok=outcome.ok,
            run_dir=str(outcome.run_dir),
            run_path=str(outcome.run_path),
            failed_phase=outcome.failed_phase,
            error=outcome.error,
        )

    @app.post("/encode", response_model=EncodeResponse)
    def encode(req: EncodeRequest) -> EncodeResponse:
        if req.dim < 1:
            raise HTTPException(status_code=422, detail="dim must be >= 1")
        try:
            result = encode_file(req.input, req.dim, req.seed, req.out, source_name=req.source_name)
        except (L3Error, OSError, ValueError) as exc:
            _runtime_400(exc)
        return EncodeResponse(**result)

    @app.post("/reports", response_model=ReportResponse)
    def reports(req: ReportRequest) -> ReportResponse:
        if not Path(req.run_path).exists():
            _runtime_400(FileNotFoundError(f"no run file at {req.run_path}"))
        try:
            files = emit_reports_from_run(req.run_path, out_dir=req.out_dir)
        except (L3Error, OSError, ValueError, KeyError) as exc:
            _runtime_400(exc)
        return ReportResponse(files=files)

    @app.post("/demo", response_model=DemoResponse)
    def demo(req: DemoRequest) -> DemoResponse:
        try:
            config_path = write_demo(req.dir, seed=req.seed)
        except (L3Error, OSError) as exc:
            _runtime_400(exc)
        return DemoResponse(config_path=str(config_path))

    return app

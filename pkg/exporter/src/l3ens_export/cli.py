"""Command-line front end.

Local-encoder exports require an explicit --pooling; API exports forbid it
because the provider pools server-side. Exit codes match the engine CLI:
0 success, 2 bad arguments or job, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from l3ens.errors import L3Error

from .api import CACHE_DIR_ENV
from .errors import ExportError, InvalidJob
from .export import export_embeddings
from .jobs import ApiExportJob, ExportJob, POOLINGS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l3ens-export",
        description="Export embedding files from a pretrained encoder or an embedding API.",
    )
    parser.add_argument("--model", required=True, help="model directory, hub name, or API model name")
    parser.add_argument("--pooling", choices=POOLINGS, help="sentence pooling for local encoders (required without --api-url)")
    parser.add_argument("--input", required=True, help="JSONL corpus: id plus text or text_a/text_b")
    parser.add_argument("--split", default="", help="split name recorded in the manifest")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--out", required=True, help="output embedding file path")
    parser.add_argument("--api-url", help="embedding endpoint; switches to the API channel")
    parser.add_argument("--api-key-env", metavar="VAR", help="environment variable holding the API key")
    parser.add_argument("--cache-dir", help=f"API response cache directory (default: ${CACHE_DIR_ENV} or ~/.cache/l3ens-export)")
    parser.add_argument("--max-retries", type=int, default=3, help="API retry attempts after the first try")
    return parser


def _job_from_args(parser: argparse.ArgumentParser, args: argparse.Namespace):
    if args.api_url:
        if args.pooling:
            parser.error("--pooling does not apply to API exports; the provider pools server-side")
        api_key = os.environ.get(args.api_key_env) if args.api_key_env else None
        return ApiExportJob(
            model=args.model,
            url=args.api_url,
            input_path=args.input,
            split=args.split,
            batch_size=args.batch_size,
            output_path=args.out,
            api_key=api_key,
            cache_dir=args.cache_dir,
            max_retries=args.max_retries,
        )
    if not args.pooling:
        parser.error(f"--pooling is required for local encoders (one of {', '.join(POOLINGS)})")
    return ExportJob(
        model=args.model,
        pooling=args.pooling,
        input_path=args.input,
        split=args.split,
        batch_size=args.batch_size,
        output_path=args.out,
    )


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("L3ENS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    job = _job_from_args(parser, args)
    try:
        result = export_embeddings(job)
    except InvalidJob as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExportError, L3Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {result.count} x {result.dim} embeddings to {result.output_path} (source '{result.source_name}')")
    for rid in result.over_limit_ids:
        print(f"warning: record '{rid}' exceeded the token limit; its row is zeros", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

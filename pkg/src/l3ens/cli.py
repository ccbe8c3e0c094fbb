"""Command-line front end.

Every subcommand except `serve` is a thin client over the HTTP service:
by default the app is mounted in-process (no daemon involved), and
--server redirects the same requests to a remote instance. Exit codes:
0 success, 2 invalid config, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _post(server: str | None, route: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(route, json=payload)

    async def go() -> httpx.Response:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, base_url="http://l3ens.local", timeout=None) as client:
            return await client.post(route, json=payload)

    return asyncio.run(go())


def _path_arg(value: str, server: str | None) -> str:
    # relative paths are resolved locally; against a remote server they
    # are passed through and interpreted on that machine
    return value if server else str(Path(value).resolve())


def _print_violations(violations: list[dict]) -> None:
    for v in violations:
        print(f"{v.get('location', '$')}: {v.get('message', '')} [{v.get('kind', 'invalid_value')}]", file=sys.stderr)


def _detail_violations(response: httpx.Response) -> list[dict] | None:
    try:
        detail = response.json().get("detail")
    except (json.JSONDecodeError, ValueError):
        return None
    if isinstance(detail, dict) and isinstance(detail.get("violations"), list):
        return detail["violations"]
    return None


def _fail_from(response: httpx.Response) -> int:
    violations = _detail_violations(response)
    if response.status_code == 422 and violations is not None:
        _print_violations(violations)
        return EXIT_CONFIG
    try:
        detail = response.json().get("detail", response.text)
    except (json.JSONDecodeError, ValueError):
        detail = response.text
    print(f"error: {detail}", file=sys.stderr)
    return EXIT_CONFIG if response.status_code == 422 else EXIT_RUNTIME


def cmd_validate(args) -> int:
    response = _post(args.server, "/config/validate", {"path": _path_arg(args.config, args.server)})
    if response.status_code != 200:
        return _fail_from(response)
    body = response.json()
    if body["valid"]:
        print(f"config OK (digest {body['digest']})")
        return EXIT_OK
    _print_violations(body["violations"])
    return EXIT_CONFIG


def cmd_run(args) -> int:
    payload = {"path": _path_arg(args.config, args.server), "seeds": args.seeds}
    if args.out is not None:
        payload["out_dir"] = _path_arg(args.out, args.server)
    response = _post(args.server, "/runs", payload)
    if response.status_code != 200:
        return _fail_from(response)
    body = response.json()
    if body["ok"]:
        print(f"run complete: {body['run_path']}")
        return EXIT_OK
    print(f"run failed in phase '{body['failed_phase']}': {body['error']}", file=sys.stderr)
    print(f"partial results: {body['run_path']}", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_encode(args) -> int:
    payload = {
        "input": _path_arg(args.input, args.server),
        "dim": args.dim,
        "seed": args.seed,
        "out": _path_arg(args.out, args.server),
    }
    response = _post(args.server, "/encode", payload)
    if response.status_code != 200:
        return _fail_from(response)
    body = response.json()
    print(f"wrote {body['count']} x {body['dim']} embeddings to {body['out']}")
    print(f"manifest {body['manifest']} (digest {body['content_digest']})")
    return EXIT_OK


def cmd_report(args) -> int:
    payload = {"run_path": _path_arg(args.run_json, args.server)}
    if args.out is not None:
        payload["out_dir"] = _path_arg(args.out, args.server)
    response = _post(args.server, "/reports", payload)
    if response.status_code != 200:
        return _fail_from(response)
    for kind, path in response.json()["files"].items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_demo(args) -> int:
    response = _post(args.server, "/demo", {"dir": _path_arg(args.dir, args.server), "seed": args.seed})
    if response.status_code != 200:
        return _fail_from(response)
    print(f"demo config: {response.json()['config_path']}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l3ens", description="Lifelong-learning ensemble experiments over frozen embeddings.")
    parser.add_argument("--server", default=None, help="base URL of a running l3ens service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config file and list every violation")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (default: from the config)")
    p.add_argument("--seeds", type=int, default=1, help="sweep this many consecutive seeds")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("encode", help="hash-encode a JSONL dataset into an embedding file")
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("report", help="re-emit tables and plot data from a run.json")
    p.add_argument("run_json")
    p.add_argument("--out", default=None, help="directory for the emitted files (default: beside run.json)")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("demo", help="materialize the bundled demo experiment into a directory")
    p.add_argument("dir")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("serve", help="host the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("L3ENS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

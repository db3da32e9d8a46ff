"""Command line entry point.

Commands run in-process by default. With ``--server URL`` they are forwarded to
a running ``weavecomp serve`` instance instead; paths are then resolved on the
server side.

``WEAVECOMP_SEED`` is reserved. The core is deterministic and never reads it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, errors
from .harness import describe, emit_report, load_config, load_scenario, run_scenario

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    if getattr(args, "hop_limit", None) is not None:
        out["hop_limit"] = args.hop_limit
    if getattr(args, "strict_weave", False):
        out["strict_weave"] = True
    return out


def _post(args: argparse.Namespace, path: str, body: dict) -> dict:
    import httpx

    try:
        resp = httpx.post(args.server.rstrip("/") + path, json=body, timeout=60.0)
    except httpx.HTTPError as exc:
        raise errors.ConfigError(f"server unreachable: {exc}") from None
    data = resp.json()
    if resp.status_code >= 400:
        detail = data.get("detail", data)
        raise errors.ConfigError(f"{data.get('error', resp.status_code)}: {detail}")
    return data


def _remote_body(args: argparse.Namespace) -> dict:
    return {"config_dir": str(Path(args.config_dir).resolve()), "settings": _overrides(args)}


def cmd_validate(args: argparse.Namespace) -> int:
    if args.server:
        data = _post(args, "/validate", _remote_body(args))
        if not data["ok"]:
            print(f"invalid: {data['error']}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"ok: {data['summary']}")
        return EXIT_OK
    container = load_config(args.config_dir, _overrides(args))
    print(f"ok: {describe(container)}")
    return EXIT_OK


def cmd_snapshot(args: argparse.Namespace) -> int:
    if args.server:
        text = _post(args, "/snapshot", _remote_body(args))["snapshot"]
    else:
        text = load_config(args.config_dir, _overrides(args)).assembly.snapshot()
    sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if args.server:
        body = _remote_body(args) | {
            "scenario": str(Path(args.scenario).resolve()),
            "fail_fast": args.fail_fast,
            "report": args.report,
        }
        data = _post(args, "/run", body)
        text, trace, code = data["report"], data["trace"], data["exit_code"]
    else:
        container = load_config(args.config_dir, _overrides(args))
        report = run_scenario(container, load_scenario(args.scenario), fail_fast=args.fail_fast)
        text, trace, code = emit_report(report, args.report), emit_report(report, "trace"), report.exit_code
    if args.trace:
        Path(args.trace).write_text(trace, encoding="utf-8")
    sys.stdout.write(text)
    return code


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("weavecomp.api.app:app", host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weavecomp",
        description="Load component assemblies, weave aspects and replay scenarios.",
        epilog="WEAVECOMP_SEED is reserved and has no effect: every run is deterministic.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_command(name: str, helptext: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config_dir", help="configuration directory (weavecomp.json manifest)")
        p.add_argument("--server", metavar="URL", help="forward to a running weavecomp service")
        p.add_argument("--hop-limit", type=int, metavar="N", help="override the hop limit")
        p.add_argument("--strict-weave", action="store_true", help="empty pointcuts fail the weave")
        return p

    p = config_command("validate", "load a configuration and report what it contains")
    p.set_defaults(func=cmd_validate)
    p = config_command("snapshot", "print the canonical snapshot of the loaded assembly")
    p.set_defaults(func=cmd_snapshot)
    p = config_command("run", "replay a scenario and check its expectations")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--trace", metavar="FILE", help="write the raw dispatch trace here")
    p.add_argument("--report", choices=("text", "json"), default="text")
    p.add_argument("--fail-fast", action="store_true", help="stop at the first failing step")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.WeaveCompError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

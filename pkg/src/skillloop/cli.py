"""Command-line entry points: benchmark runs, the API server, KB inspection.

Exit codes: 0 success, 1 scenario/usage error, 2 acceptance-threshold failure
(``run --assert``).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import knowledge
from .gateway import GatewayError, RemoteBackend, RemoteConfig
from .knowledge import KnowledgeBase, KnowledgeError, _round_floats
from .orchestrator import AblationConfig, OrchestratorError, run_benchmark
from .scenario import ScenarioError, load_suite

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ASSERT = 2


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillloop", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="run a scripted benchmark over a scenario suite")
    run.add_argument("--scenario", required=True, help="scenario file or directory")
    run.add_argument("--backend", choices=("scripted", "remote"), default="scripted")
    run.add_argument(
        "--backend-config", help="JSON file with endpoint/model for --backend remote"
    )
    run.add_argument(
        "--ablate",
        default="full",
        help="comma list of full,cap,no-history,no-extractor,no-visual,no-retrieval",
    )
    run.add_argument("--iterations", type=int, default=3)
    run.add_argument("--seed", type=int, default=0, help="embedder seed")
    run.add_argument("--report", help="write the JSON report to this path")
    run.add_argument(
        "--assert",
        dest="assert_thresholds",
        action="store_true",
        help="exit 2 unless corrections decline over iterations and no ablation "
        "beats the full configuration",
    )

    serve = sub.add_parser("serve", help="serve the HTTP API (and console, if built)")
    serve.add_argument("--scenario", default="scenarios")
    serve.add_argument("--port", type=int, default=8400)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument(
        "--static", default="frontend", help="directory of console assets to serve"
    )

    kb = sub.add_parser("kb", help="inspect a knowledge-base file")
    kb.add_argument("action", choices=("list", "get", "delete"))
    kb.add_argument("key", nargs="?", help="composite key, e.g. skill:Open the top drawer")
    kb.add_argument("--kb", required=True, help="knowledge-base file")

    return parser


def _parse_ablations(tokens: str) -> list[AblationConfig]:
    ablations = []
    for token in tokens.split(","):
        token = token.strip()
        if token:
            ablations.append(AblationConfig.from_token(token))
    if not ablations:
        raise CliError("--ablate needs at least one token")
    return ablations


def _backend_factory(args):
    if args.backend == "scripted":
        return None
    if not args.backend_config:
        raise CliError("--backend remote requires --backend-config")
    try:
        doc = json.loads(Path(args.backend_config).read_text(encoding="utf-8"))
        config = RemoteConfig(**doc)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"cannot load backend config: {exc}")
    return lambda _scenario: RemoteBackend(config)


def format_table(report) -> str:
    """Aligned text table: one row per iteration plus J-bar, one column per ablation."""
    headers = ["iteration"] + list(report.ablations)
    rows = []
    for iteration in range(1, report.iterations + 1):
        rows.append(
            [str(iteration)]
            + [f"{float(report.mean_corrections(a, iteration)):.3f}" for a in report.ablations]
        )
    rows.append(
        ["J-bar"] + [f"{float(report.amortized_for(a)):.3f}" for a in report.ablations]
    )
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    lines = []
    for row in [headers] + rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def check_thresholds(report) -> list[str]:
    """Acceptance thresholds for --assert; returns human-readable failures."""
    failures = []
    if "full" not in report.ablations:
        return ["--assert needs the full configuration in --ablate"]
    means = [float(report.mean_corrections("full", i)) for i in range(1, report.iterations + 1)]
    if any(b > a for a, b in zip(means, means[1:])):
        failures.append(f"full-configuration corrections increased across iterations: {means}")
    full_amortized = report.amortized_for("full")
    for ablation in report.ablations:
        if ablation != "full" and report.amortized_for(ablation) < full_amortized:
            failures.append(
                f"ablation {ablation} needed fewer amortized corrections than full"
            )
    return failures


def cmd_run(args) -> int:
    if args.iterations < 1:
        raise CliError("--iterations must be >= 1")
    knowledge.DEFAULT_SEED = args.seed
    ablations = _parse_ablations(args.ablate)
    suite = load_suite(args.scenario)
    report = run_benchmark(
        suite, ablations, iterations=args.iterations, backend_factory=_backend_factory(args)
    )
    if args.report:
        text = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(format_table(report))
    if args.assert_thresholds:
        failures = check_thresholds(report)
        if failures:
            for failure in failures:
                print(f"assertion failed: {failure}", file=sys.stderr)
            return EXIT_ASSERT
    return EXIT_OK


def cmd_serve(args) -> int:  # pragma: no cover - blocks on uvicorn
    import uvicorn

    from .service import create_app

    app = create_app(args.scenario, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def cmd_kb(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    if args.action == "list":
        for entry in kb.list():
            print(entry.composite_key)
        return EXIT_OK
    if not args.key:
        raise CliError(f"kb {args.action} needs a key")
    entry = kb.get(args.key)
    if entry is None:
        raise CliError(f"no knowledge entry {args.key!r}")
    if args.action == "get":
        print(json.dumps(_round_floats(asdict(entry)), sort_keys=True, indent=2))
        return EXIT_OK
    kb.delete(args.key)
    kb.save(args.kb)
    print(f"deleted {args.key}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.subcommand == "run":
            return cmd_run(args)
        if args.subcommand == "serve":
            return cmd_serve(args)
        return cmd_kb(args)
    except (CliError, ScenarioError, OrchestratorError, KnowledgeError, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())

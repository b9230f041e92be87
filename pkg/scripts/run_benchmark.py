#!/usr/bin/env python3
"""Run the full ablation matrix over a scenario suite and print the table.

Examples:
    python3 scripts/run_benchmark.py
    python3 scripts/run_benchmark.py --scenario scenarios/plan --iterations 1
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from skillloop.cli import format_table  # noqa: E402
from skillloop.orchestrator import AblationConfig, run_benchmark  # noqa: E402
from skillloop.scenario import load_suite  # noqa: E402

ALL_ABLATIONS = ("full", "cap", "no-history", "no-extractor", "no-visual", "no-retrieval")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="scenarios/skill")
    parser.add_argument("--ablate", default=",".join(ALL_ABLATIONS))
    parser.add_argument("--iterations", type=int, default=3)
    parser.add_argument("--report", help="also write the JSON report here")
    args = parser.parse_args()

    suite = load_suite(args.scenario)
    ablations = [AblationConfig.from_token(t) for t in args.ablate.split(",")]
    report = run_benchmark(suite, ablations, iterations=args.iterations)
    sys.stdout.write(format_table(report))
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        print(f"report written to {args.report}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Replay one scenario task with the scripted user, printing the transcript.

Shows the full loop on stdout: plan, per-statement execution, corrections,
revised programs, and distilled knowledge.

Example:
    python3 scripts/walkthrough.py --scenario scenarios/skill/put_scissors.json
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from skillloop.orchestrator import (  # noqa: E402
    AblationConfig,
    ScriptedUser,
    Session,
    run_session,
)
from skillloop.scenario import ScenarioSpec  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="scenarios/skill/put_scissors.json")
    parser.add_argument("--task", type=int, default=0)
    parser.add_argument("--ablate", default="full")
    parser.add_argument("--iteration", type=int, default=1)
    args = parser.parse_args()

    scenario = ScenarioSpec.load(args.scenario)
    session = Session(
        scenario,
        AblationConfig.from_token(args.ablate),
        task_index=args.task,
        iteration=args.iteration,
    )
    task = scenario.tasks[args.task]
    print(f"# {scenario.title}")
    print(f"instruction: {task.instruction}\n")
    session.submit_instruction(task.instruction)
    run_session(session, ScriptedUser(task))
    for event in session.events:
        payload = json.dumps(event["payload"], sort_keys=True)
        print(f"{event['seq']:>3}  {event['type']:<10} {payload}")
    print(f"\ncorrections: {session.corrections}")
    for entry in session.kb.list():
        print(f"distilled: {entry.composite_key}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

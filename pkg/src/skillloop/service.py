"""HTTP service: sessions, stepping, corrections, KB inspection, event stream.

Mutations are plain request/response; progress is observable through a
server-sent event stream backed by each session's persistent event log, so a
client reconnecting with ``?from=<seq>`` replays exactly the missed events.
All mutating routes on one session are serialized by a per-session lock.
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from . import orchestrator as orc
from .knowledge import KnowledgeBase, _round_floats
from .scenario import ScenarioError, ScenarioSpec, load_suite

USER_MODES = ("human", "scripted")


class CreateSessionBody(BaseModel):
    scenario_id: str
    ablation: str = "full"
    user_mode: str = "human"
    task_index: int = 0
    iteration: int = 1


class TextBody(BaseModel):
    text: str


class BenchmarkBody(BaseModel):
    suite: Optional[list[str]] = None  # scenario ids; None = all loaded
    ablations: list[str] = ["full"]
    iterations: int = 3


@dataclass
class ManagedSession:
    session: orc.Session
    user_mode: str
    lock: threading.Lock = field(default_factory=threading.Lock)


def _entry_doc(entry) -> dict:
    return _round_floats(asdict(entry))


def create_app(
    scenario_dir="scenarios",
    kb: Optional[KnowledgeBase] = None,
    poll_interval: float = 0.05,
    static_dir=None,
) -> FastAPI:
    app = FastAPI(title="skillloop")
    scenarios: dict[str, ScenarioSpec] = {}
    root = Path(scenario_dir)
    files = sorted(root.rglob("*.json")) if root.is_dir() else [root]
    for path in files:
        spec = ScenarioSpec.load(path)
        if spec.id in scenarios:
            raise ScenarioError(f"duplicate scenario id {spec.id!r}")
        scenarios[spec.id] = spec

    shared_kb = kb if kb is not None else KnowledgeBase()
    sessions: dict[str, ManagedSession] = {}
    counter = itertools.count()
    app.state.scenarios = scenarios
    app.state.kb = shared_kb
    app.state.sessions = sessions

    def managed(session_id: str) -> ManagedSession:
        try:
            return sessions[session_id]
        except KeyError:
            raise HTTPException(404, f"unknown session {session_id!r}")

    def guarded(ms: ManagedSession, action) -> dict:
        with ms.lock:
            try:
                action()
            except orc.InvalidTransition as exc:
                raise HTTPException(409, str(exc))
            except orc.OrchestratorError as exc:
                raise HTTPException(400, str(exc))
            return ms.session.snapshot()

    @app.get("/scenarios")
    def list_scenarios() -> list[dict]:
        return [
            {"id": s.id, "title": s.title, "tasks": [t.instruction for t in s.tasks]}
            for s in scenarios.values()
        ]

    @app.post("/sessions")
    def create_session(body: CreateSessionBody) -> dict:
        scenario = scenarios.get(body.scenario_id)
        if scenario is None:
            raise HTTPException(404, f"unknown scenario {body.scenario_id!r}")
        if body.user_mode not in USER_MODES:
            raise HTTPException(400, f"unknown user mode {body.user_mode!r}")
        if not 0 <= body.task_index < len(scenario.tasks):
            raise HTTPException(400, "task_index out of range")
        try:
            ablation = orc.AblationConfig.from_token(body.ablation)
        except orc.OrchestratorError as exc:
            raise HTTPException(400, str(exc))
        session_id = f"s{next(counter)}"
        session = orc.Session(
            scenario,
            ablation,
            kb=shared_kb,
            task_index=body.task_index,
            iteration=body.iteration,
            session_id=session_id,
        )
        sessions[session_id] = ManagedSession(session, body.user_mode)
        return {"session_id": session_id, "state": session.snapshot()}

    @app.post("/sessions/{session_id}/instruction")
    def instruction(session_id: str, body: TextBody) -> dict:
        ms = managed(session_id)

        def action():
            ms.session.submit_instruction(body.text)
            if ms.user_mode == "scripted":
                user = orc.ScriptedUser(ms.session.task)
                orc.run_session(ms.session, user)

        return guarded(ms, action)

    @app.post("/sessions/{session_id}/step")
    def step(session_id: str) -> dict:
        ms = managed(session_id)
        return guarded(ms, ms.session.step)

    @app.post("/sessions/{session_id}/interrupt")
    def interrupt(session_id: str) -> dict:
        ms = managed(session_id)
        return guarded(ms, ms.session.interrupt)

    @app.post("/sessions/{session_id}/correction")
    def correction(session_id: str, body: TextBody) -> dict:
        ms = managed(session_id)
        return guarded(ms, lambda: ms.session.correction(body.text))

    @app.post("/sessions/{session_id}/approve")
    def approve(session_id: str) -> dict:
        ms = managed(session_id)
        return guarded(ms, ms.session.approve)

    @app.get("/sessions/{session_id}/state")
    def state(session_id: str) -> dict:
        return managed(session_id).session.snapshot()

    @app.get("/sessions/{session_id}/events")
    def event_stream(session_id: str, start: int = Query(0, alias="from")):
        ms = managed(session_id)

        def generate():
            index = max(0, start)
            while True:
                log = ms.session.events
                while index < len(log):
                    event = log[index]
                    yield (
                        f"id: {event['seq']}\n"
                        f"event: {event['type']}\n"
                        f"data: {json.dumps(event['payload'], sort_keys=True)}\n\n"
                    )
                    index += 1
                if ms.session.state == orc.DONE:
                    return
                time.sleep(poll_interval)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/kb")
    def kb_list() -> list[dict]:
        return [_entry_doc(e) for e in shared_kb.list()]

    @app.get("/kb/{composite_key:path}")
    def kb_get(composite_key: str) -> dict:
        entry = shared_kb.get(composite_key)
        if entry is None:
            raise HTTPException(404, f"no knowledge entry {composite_key!r}")
        return _entry_doc(entry)

    @app.delete("/kb/{composite_key:path}")
    def kb_delete(composite_key: str) -> dict:
        if not shared_kb.delete(composite_key):
            raise HTTPException(404, f"no knowledge entry {composite_key!r}")
        return {"deleted": composite_key}

    @app.post("/benchmark")
    def benchmark(body: BenchmarkBody) -> dict:
        ids = body.suite if body.suite is not None else sorted(scenarios)
        try:
            suite = [scenarios[i] for i in ids]
        except KeyError as exc:
            raise HTTPException(404, f"unknown scenario {exc.args[0]!r}")
        try:
            ablations = [orc.AblationConfig.from_token(t) for t in body.ablations]
            report = orc.run_benchmark(suite, ablations, iterations=body.iterations)
        except orc.OrchestratorError as exc:
            raise HTTPException(400, str(exc))
        return report.to_dict()

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        # Mounted last so the API routes above take precedence.
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app


__all__ = ["create_app", "load_suite"]

from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from skillloop.service import create_app

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def client():
    app = create_app(SCENARIOS, poll_interval=0.001)
    with TestClient(app) as c:
        yield c


def create(client, scenario_id="put_scissors", **kwargs):
    body = {"scenario_id": scenario_id}
    body.update(kwargs)
    r = client.post("/sessions", json=body)
    assert r.status_code == 200, r.text
    return r.json()["session_id"]


def read_sse(client, session_id, start=0):
    events = []
    with client.stream(
        "GET", f"/sessions/{session_id}/events", params={"from": start}
    ) as r:
        assert r.status_code == 200
        current = {}
        for line in r.iter_lines():
            if line.startswith("id: "):
                current["seq"] = int(line[4:])
            elif line.startswith("event: "):
                current["type"] = line[7:]
            elif line.startswith("data: "):
                current["data"] = line[6:]
            elif line == "" and current:
                events.append(current)
                current = {}
    return events


class TestSessions:
    def test_unknown_scenario_404(self, client):
        r = client.post("/sessions", json={"scenario_id": "nope"})
        assert r.status_code == 404

    def test_unknown_ablation_400(self, client):
        r = client.post(
            "/sessions", json={"scenario_id": "put_scissors", "ablation": "bogus"}
        )
        assert r.status_code == 400

    def test_scenarios_listing(self, client):
        ids = {s["id"] for s in client.get("/scenarios").json()}
        assert "put_scissors" in ids
        assert "two_drawer" in ids

    def test_instruction_emits_plan_with_three_skills(self, client):
        sid = create(client)
        r = client.post(
            f"/sessions/{sid}/instruction",
            json={"text": "Put the scissors into the top drawer"},
        )
        assert r.status_code == 200
        assert len(r.json()["plan"]) >= 3

    def test_instruction_twice_409(self, client):
        sid = create(client)
        body = {"text": "Put the scissors into the top drawer"}
        client.post(f"/sessions/{sid}/instruction", json=body)
        assert client.post(f"/sessions/{sid}/instruction", json=body).status_code == 409

    def test_correction_while_executing_409(self, client):
        sid = create(client)
        client.post(
            f"/sessions/{sid}/instruction",
            json={"text": "Put the scissors into the top drawer"},
        )
        r = client.post(
            f"/sessions/{sid}/correction", json={"text": "move right a little bit"}
        )
        assert r.status_code == 409

    def test_step_before_instruction_409(self, client):
        sid = create(client)
        assert client.post(f"/sessions/{sid}/step").status_code == 409

    def test_interrupt_is_idempotent(self, client):
        sid = create(client)
        client.post(
            f"/sessions/{sid}/instruction",
            json={"text": "Put the scissors into the top drawer"},
        )
        first = client.post(f"/sessions/{sid}/interrupt")
        second = client.post(f"/sessions/{sid}/interrupt")
        assert first.status_code == second.status_code == 200
        assert second.json()["state"] == "awaiting_correction"

    def test_state_snapshot_shape(self, client):
        sid = create(client)
        snap = client.get(f"/sessions/{sid}/state").json()
        assert snap["state"] == "idle"
        assert set(snap) >= {"plan", "world", "history", "corrections", "ablation"}

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/ghost/state").status_code == 404
        assert client.post("/sessions/ghost/step").status_code == 404


class TestScriptedMode:
    def test_scripted_session_runs_to_done(self, client):
        sid = create(client, user_mode="scripted")
        r = client.post(
            f"/sessions/{sid}/instruction",
            json={"text": "Put the scissors into the top drawer"},
        )
        assert r.status_code == 200
        snap = r.json()
        assert snap["state"] == "done"
        assert snap["corrections"] == 3


class TestEventStream:
    def _finished_session(self, client):
        sid = create(client, user_mode="scripted")
        client.post(
            f"/sessions/{sid}/instruction",
            json={"text": "Put the scissors into the top drawer"},
        )
        return sid

    def test_replay_from_zero_is_full_transcript(self, client):
        sid = self._finished_session(client)
        events = read_sse(client, sid)
        expected = len(client.app.state.sessions[sid].session.events)
        assert [e["seq"] for e in events] == list(range(expected))
        assert events[0]["type"] == "plan"
        assert events[-1]["type"] == "done"

    def test_replay_from_offset(self, client):
        sid = self._finished_session(client)
        total = len(read_sse(client, sid))
        tail = read_sse(client, sid, start=5)
        assert [e["seq"] for e in tail] == list(range(5, total))

    def test_reconnect_loses_nothing(self, client):
        sid = self._finished_session(client)
        full = read_sse(client, sid)
        cut = len(full) // 2
        resumed = read_sse(client, sid, start=cut)
        assert full[cut:] == resumed


class TestKnowledgeRoutes:
    def test_kb_lifecycle(self, client):
        sid = create(client, scenario_id="open_drawer", user_mode="scripted")
        client.post(f"/sessions/{sid}/instruction", json={"text": "Open the top drawer"})
        entries = client.get("/kb").json()
        assert entries, "scripted run should distill knowledge"
        key = f"{entries[0]['kind']}:{entries[0]['key']}"
        assert client.get(f"/kb/{key}").json()["key"] == entries[0]["key"]
        assert client.delete(f"/kb/{key}").status_code == 200
        assert client.get(f"/kb/{key}").status_code == 404
        assert client.delete(f"/kb/{key}").status_code == 404


class TestBenchmarkRoute:
    def test_benchmark_blocking(self, client):
        r = client.post(
            "/benchmark",
            json={
                "suite": ["open_drawer"],
                "ablations": ["full", "no-history"],
                "iterations": 2,
            },
        )
        assert r.status_code == 200
        doc = r.json()
        assert doc["iterations"] == 2
        assert {e["ablation"] for e in doc["episodes"]} == {"full", "no_history"}

    def test_benchmark_unknown_scenario(self, client):
        r = client.post("/benchmark", json={"suite": ["ghost"]})
        assert r.status_code == 404

    def test_benchmark_zero_iterations(self, client):
        r = client.post(
            "/benchmark", json={"suite": ["open_drawer"], "iterations": 0}
        )
        assert r.status_code == 400

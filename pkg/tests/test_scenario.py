from pathlib import Path

import pytest

from skillloop import scenario as sc
from skillloop.knowledge import TextEmbedder

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def minimal_doc(**overrides):
    doc = {
        "id": "demo",
        "title": "Demo",
        "scene": {
            "objects": [
                {
                    "id": "cup",
                    "label": "cup",
                    "category": "item",
                    "position": [0.1, 0.1, 0.02],
                }
            ]
        },
        "tasks": [{"instruction": "Pick up the cup"}],
    }
    doc.update(overrides)
    return doc


class TestLoading:
    def test_minimal_roundtrip(self):
        spec = sc.ScenarioSpec.from_dict(minimal_doc())
        assert spec.id == "demo"
        assert spec.tasks[0].mode == "execute"
        assert spec.tasks[0].known_states is None

    def test_all_shipped_scenarios_load(self):
        files = sorted(SCENARIOS.rglob("*.json"))
        assert len(files) >= 9
        for path in files:
            spec = sc.ScenarioSpec.load(path)
            assert spec.id, path

    def test_missing_tasks(self):
        doc = minimal_doc()
        del doc["tasks"]
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_missing_id(self):
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(minimal_doc(id=""))

    def test_bad_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.load(path)

    def test_unknown_task_mode(self):
        doc = minimal_doc(tasks=[{"instruction": "Pick up the cup", "mode": "dream"}])
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_shared_policy_checks_prepended(self):
        doc = minimal_doc(
            user_policy={
                "checks": [{"kind": "forbid_conjunction", "correction": "One at a time"}]
            },
            tasks=[
                {
                    "instruction": "Pick up the cup",
                    "checks": [
                        {
                            "kind": "forbid_destination",
                            "subject": "top drawer",
                            "correction": "The top drawer is full",
                        }
                    ],
                }
            ],
        )
        spec = sc.ScenarioSpec.from_dict(doc)
        assert [c.kind for c in spec.tasks[0].checks] == [
            "forbid_conjunction",
            "forbid_destination",
        ]


class TestValidation:
    def test_duplicate_object_ids(self):
        doc = minimal_doc()
        doc["scene"]["objects"].append(dict(doc["scene"]["objects"][0]))
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_unknown_inside_of(self):
        doc = minimal_doc()
        doc["scene"]["objects"][0]["inside_of"] = "ghost"
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_variation_must_reference_known_object(self):
        doc = minimal_doc()
        doc["scene"]["variations"] = {"2": {"ghost": {"position": [0, 0, 0]}}}
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_variation_key_must_be_number(self):
        doc = minimal_doc()
        doc["scene"]["variations"] = {"later": {"cup": {"position": [0, 0, 0.02]}}}
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_known_states_must_reference_known_object(self):
        doc = minimal_doc(
            tasks=[{"instruction": "Pick up the cup", "known_states": ["ghost"]}]
        )
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)

    def test_unknown_check_kind(self):
        doc = minimal_doc(
            tasks=[
                {
                    "instruction": "Pick up the cup",
                    "checks": [{"kind": "require_magic", "correction": "no"}],
                }
            ]
        )
        with pytest.raises(sc.ScenarioError):
            sc.ScenarioSpec.from_dict(doc)


class TestWorldBuilding:
    def test_iterations_start_at_one(self):
        spec = sc.ScenarioSpec.from_dict(minimal_doc())
        with pytest.raises(sc.ScenarioError):
            spec.build_world(0)

    def test_variation_overrides_position(self):
        spec = sc.ScenarioSpec.load(SCENARIOS / "skill" / "open_drawer.json")
        base = spec.build_world(1).objects["top_drawer"].pose.position
        moved = spec.build_world(2).objects["top_drawer"].pose.position
        assert base != moved

    def test_variation_absent_for_other_iterations(self):
        spec = sc.ScenarioSpec.load(SCENARIOS / "skill" / "open_drawer.json")
        assert spec.build_world(1).objects["top_drawer"].pose.position == (
            spec.build_world(99).objects["top_drawer"].pose.position
        )

    def test_feature_text_uses_embedder(self):
        spec = sc.ScenarioSpec.load(SCENARIOS / "retrieval" / "two_drawer.json")
        world = spec.build_world(1)
        embedder = TextEmbedder()
        assert world.objects["top_drawer"].feature == embedder.embed("round metal knob")

    def test_builds_are_deterministic(self):
        spec = sc.ScenarioSpec.load(SCENARIOS / "skill" / "put_scissors.json")
        from skillloop.sim import serialize_world

        assert serialize_world(spec.build_world(1)) == serialize_world(spec.build_world(1))


class TestStatesText:
    def test_articulation_states(self):
        spec = sc.ScenarioSpec.load(SCENARIOS / "plan" / "spoon.json")
        world = spec.build_world(1)
        text = spec.states_text(world, spec.tasks[0])
        assert "top drawer(closed)" in text
        assert "bottom drawer(open)" in text
        assert "salt(in bottom drawer)" in text
        assert "fork(on table)" in text

    def test_known_states_filter(self):
        spec = sc.ScenarioSpec.load(SCENARIOS / "skill" / "put_scissors.json")
        world = spec.build_world(1)
        assert spec.states_text(world, spec.tasks[0]) == "N/A"

    def test_ajar(self):
        doc = minimal_doc()
        doc["scene"]["objects"][0].update(
            {
                "position": [0.4, 0.3, 0.1],
                "normal": [0, -1, 0],
                "articulation": {"axis": [0, -1, 0], "travel_max": 0.15, "open_fraction": 0.4},
            }
        )
        spec = sc.ScenarioSpec.from_dict(doc)
        world = spec.build_world(1)
        assert sc.object_state(world, world.objects["cup"]) == "ajar"


class TestLoadSuite:
    def test_directory(self):
        suite = sc.load_suite(SCENARIOS / "skill")
        assert [s.id for s in suite] == sorted(s.id for s in suite) or len(suite) == 4

    def test_single_file(self):
        suite = sc.load_suite(SCENARIOS / "skill" / "open_drawer.json")
        assert len(suite) == 1

    def test_empty_directory(self, tmp_path):
        with pytest.raises(sc.ScenarioError):
            sc.load_suite(tmp_path)

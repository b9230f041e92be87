import json
from pathlib import Path

import pytest

from skillloop import cli
from skillloop.knowledge import KnowledgeBase, KnowledgeEntry

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
SKILL = str(SCENARIOS / "skill")


class TestRun:
    def test_exit_zero_and_table(self, capsys):
        assert cli.main(["run", "--scenario", SKILL, "--iterations", "2"]) == 0
        out = capsys.readouterr().out
        lines = out.splitlines()
        assert lines[0].split() == ["iteration", "full"]
        assert lines[-1].startswith("J-bar")

    def test_zero_iterations_is_usage_error(self, capsys):
        assert cli.main(["run", "--scenario", SKILL, "--iterations", "0"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_scenario_path(self, capsys):
        assert cli.main(["run", "--scenario", "/nonexistent"]) == 1

    def test_unknown_ablation_token(self, capsys):
        assert cli.main(["run", "--scenario", SKILL, "--ablate", "no-gravity"]) == 1

    def test_remote_backend_requires_config(self, capsys):
        code = cli.main(["run", "--scenario", SKILL, "--backend", "remote"])
        assert code == 1
        assert "backend-config" in capsys.readouterr().err

    def test_cap_column_dominates_full_at_iteration_one(self, capsys):
        cli.main(
            ["run", "--scenario", SKILL, "--ablate", "full,cap", "--iterations", "1"]
        )
        row = capsys.readouterr().out.splitlines()[1].split()
        assert row[0] == "1"
        assert float(row[2]) >= float(row[1])

    def test_report_file_is_byte_identical_across_runs(self, tmp_path, capsys):
        paths = [tmp_path / "a.json", tmp_path / "b.json"]
        for path in paths:
            assert (
                cli.main(
                    [
                        "run",
                        "--scenario",
                        SKILL,
                        "--ablate",
                        "full,no-history",
                        "--report",
                        str(path),
                    ]
                )
                == 0
            )
        capsys.readouterr()
        assert paths[0].read_bytes() == paths[1].read_bytes()
        doc = json.loads(paths[0].read_text())
        assert doc["iterations"] == 3

    def test_assert_passes_on_skill_suite(self, capsys):
        code = cli.main(
            ["run", "--scenario", SKILL, "--ablate", "full,cap", "--assert"]
        )
        assert code == 0

    def test_assert_requires_full(self, capsys):
        code = cli.main(["run", "--scenario", SKILL, "--ablate", "cap", "--assert"])
        assert code == 2
        assert "assertion failed" in capsys.readouterr().err

    def test_seed_changes_nothing_structural(self, capsys):
        assert (
            cli.main(
                ["run", "--scenario", SKILL, "--iterations", "1", "--seed", "7"]
            )
            == 0
        )


class TestKbCommand:
    @pytest.fixture
    def kb_file(self, tmp_path):
        kb = KnowledgeBase()
        kb.put(
            KnowledgeEntry(
                key="Open the top drawer",
                kind="skill",
                task_params={"pull_distance": 0.105},
            )
        )
        path = tmp_path / "store.kb"
        kb.save(path)
        return str(path)

    def test_list(self, kb_file, capsys):
        assert cli.main(["kb", "list", "--kb", kb_file]) == 0
        assert capsys.readouterr().out == "skill:Open the top drawer\n"

    def test_get(self, kb_file, capsys):
        code = cli.main(["kb", "get", "skill:Open the top drawer", "--kb", kb_file])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["task_params"] == {"pull_distance": 0.105}

    def test_get_missing(self, kb_file, capsys):
        assert cli.main(["kb", "get", "skill:ghost", "--kb", kb_file]) == 1

    def test_get_without_key(self, kb_file, capsys):
        assert cli.main(["kb", "get", "--kb", kb_file]) == 1

    def test_delete_persists(self, kb_file, capsys):
        assert (
            cli.main(["kb", "delete", "skill:Open the top drawer", "--kb", kb_file])
            == 0
        )
        capsys.readouterr()
        assert cli.main(["kb", "list", "--kb", kb_file]) == 0
        assert capsys.readouterr().out == ""

    def test_corrupt_file(self, tmp_path, capsys):
        path = tmp_path / "bad.kb"
        path.write_text("not a kb\n", encoding="utf-8")
        assert cli.main(["kb", "list", "--kb", str(path)]) == 1

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillloop import knowledge as kn
from skillloop.gateway import Gateway, ScriptedBackend


def scripted_gateway(tables=None):
    return Gateway(ScriptedBackend(tables or {}))


class TestCosine:
    def test_known_value(self):
        # (1,2,2)·(2,1,2) = 8, |a| = |b| = 3
        assert kn.cosine((1, 2, 2), (2, 1, 2)) == pytest.approx(8 / 9)

    def test_identical(self):
        assert kn.cosine((0.3, -0.4, 0.5), (0.3, -0.4, 0.5)) == pytest.approx(1.0)

    def test_zero_vector(self):
        with pytest.raises(kn.ZeroVector):
            kn.cosine((0, 0, 0), (1, 0, 0))


class TestEmbedder:
    def test_deterministic_and_normalized(self):
        e = kn.TextEmbedder(dim=16, seed=7)
        a = e.embed("round metal knob")
        assert a == e.embed("round metal knob")
        assert len(a) == 16
        assert math.sqrt(sum(x * x for x in a)) == pytest.approx(1.0)

    def test_seed_changes_embedding(self):
        a = kn.TextEmbedder(dim=16, seed=0).embed("handle")
        b = kn.TextEmbedder(dim=16, seed=1).embed("handle")
        assert a != b

    def test_token_order_irrelevant(self):
        e = kn.TextEmbedder()
        assert e.embed("metal knob") == pytest.approx(e.embed("knob metal"))

    def test_empty_text(self):
        with pytest.raises(kn.ZeroVector):
            kn.TextEmbedder().embed("   ")

    @settings(max_examples=30, deadline=None)
    @given(st.text(alphabet="abcdefg ", min_size=1).filter(lambda s: s.strip()))
    def test_self_similarity(self, text):
        e = kn.TextEmbedder()
        v = e.embed(text)
        assert kn.cosine(v, v) == pytest.approx(1.0)


def skill_entry(key, feature=None, seq=0, params=None):
    return kn.KnowledgeEntry(
        key=key,
        kind="skill",
        task_params=params or {"grasp_offset": [0.0, 0.0, 0.02]},
        object_info={"label": key, "feature": list(feature) if feature else []},
        provenance={"session": "s", "iteration": 0, "sequence": seq},
    )


class TestEntries:
    def test_plan_entry_rejects_params(self):
        with pytest.raises(kn.KnowledgeError):
            kn.KnowledgeEntry(key="x", kind="plan", task_params={"grasp_offset": [0, 0, 0]})

    def test_skill_entry_rejects_constraints(self):
        with pytest.raises(kn.KnowledgeError):
            kn.KnowledgeEntry(key="x", kind="skill", constraints=["c"])

    def test_bad_kind(self):
        with pytest.raises(kn.KnowledgeError):
            kn.KnowledgeEntry(key="x", kind="episode")


class TestKnowledgeBase:
    def test_put_get_overwrite(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer"))
        kb.put(skill_entry("Open the top drawer", params={"pull_distance": 0.105}))
        assert len(kb) == 1
        assert kb.get("skill:Open the top drawer").task_params == {"pull_distance": 0.105}
        assert kb.put_count == 2

    def test_sequence_assigned_and_ordering(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("b"))
        kb.put(skill_entry("a"))
        assert [e.key for e in kb.list()] == ["b", "a"]

    def test_kind_namespaces_are_separate(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Tidy up the table", params={"pull_distance": 0.1}))
        kb.put(kn.KnowledgeEntry(key="Tidy up the table", kind="plan", constraints=["c"]))
        assert len(kb) == 2
        assert [e.kind for e in kb.list(kind="plan")] == ["plan"]

    def test_delete(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("x"))
        assert kb.delete("skill:x") is True
        assert kb.delete("skill:x") is False

    def test_global_knowledge_deduplicates(self):
        kb = kn.KnowledgeBase()
        kb.put(
            kn.KnowledgeEntry(
                key="p1", kind="plan", robot_constraints=["one object at a time"],
                preferences=["user wants forks in the top drawer"],
            )
        )
        kb.put(
            kn.KnowledgeEntry(
                key="p2", kind="plan", robot_constraints=["one object at a time"],
            )
        )
        g = kb.global_knowledge()
        assert g.robot_constraints == ["one object at a time"]
        assert g.preferences == ["user wants forks in the top drawer"]


class TestPersistence:
    def _populated(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer", feature=(0.6, 0.8, 0.0)))
        kb.put(
            kn.KnowledgeEntry(
                key="Tidy up the table",
                kind="plan",
                constraints=["Tablewares should be put in the top drawer."],
                provenance={"session": "s", "iteration": 1},
            )
        )
        return kb

    def test_round_trip_is_byte_identical(self, tmp_path):
        first = tmp_path / "a.kb"
        second = tmp_path / "b.kb"
        kb = self._populated()
        kb.save(first)
        kn.KnowledgeBase.load(first).save(second)
        assert first.read_bytes() == second.read_bytes()

    def test_round_trip_preserves_entries(self, tmp_path):
        path = tmp_path / "kb"
        kb = self._populated()
        kb.save(path)
        loaded = kn.KnowledgeBase.load(path)
        assert len(loaded) == 2
        entry = loaded.get("skill:Open the top drawer")
        assert entry.object_info["feature"] == [0.6, 0.8, 0.0]
        assert entry.provenance["sequence"] == 1

    def test_header_and_checksum_present(self, tmp_path):
        path = tmp_path / "kb"
        self._populated().save(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "skillloop-kb 1"
        assert lines[-1].startswith("crc32 ")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "kb"
        path.write_text("skillloop-kb 2\ncrc32 00000000\n")
        with pytest.raises(kn.CorruptFile):
            kn.KnowledgeBase.load(path)

    def test_tampered_body(self, tmp_path):
        path = tmp_path / "kb"
        self._populated().save(path)
        text = path.read_text().replace("top drawer", "toy drawer")
        path.write_text(text)
        with pytest.raises(kn.CorruptFile):
            kn.KnowledgeBase.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(kn.IoError):
            kn.KnowledgeBase.load(tmp_path / "absent.kb")


class TestDistiller:
    PROGRAM = "\n".join(
        [
            'h = detect("top drawer handle")',
            'grasp(h, offset=[0.05, 0, 0.02], orientation="front")',
            "pull(h, distance=0.105)",
            "open_gripper()",
        ]
    )

    def test_distill_skill_extracts_parameters(self):
        distiller = kn.Distiller(scripted_gateway())
        entries = distiller.distill_skill(
            skill_text="Open the top drawer",
            history_text='correction (low): "move right a little bit"',
            final_program=self.PROGRAM,
            state_updates={"top drawer": "open"},
            object_feature=(0.6, 0.8, 0.0),
            provenance={"session": "s", "iteration": 0},
        )
        assert len(entries) == 1
        entry = entries[0]
        assert entry.kind == "skill"
        assert entry.task_params["grasp_offset"] == [0.05, 0.0, 0.02]
        assert entry.task_params["grasp_orientation"] == "front"
        assert entry.task_params["pull_distance"] == pytest.approx(0.105)
        assert entry.object_info == {
            "label": "top drawer handle",
            "feature": [0.6, 0.8, 0.0],
        }
        assert entry.object_state_updates == {"top drawer": "open"}

    def test_distill_unfulfilled_skill_rejected(self):
        distiller = kn.Distiller(scripted_gateway())
        with pytest.raises(kn.NotFulfilled):
            distiller.distill_skill(
                skill_text="Open the top drawer",
                history_text="",
                final_program=self.PROGRAM,
                state_updates={},
                object_feature=None,
                provenance={},
                fulfilled=False,
            )

    def test_distill_plan_separates_constraint_kinds(self):
        distiller = kn.Distiller(scripted_gateway())
        history = "\n".join(
            [
                "correction (high): the robot can only use one hand",
                "correction (high): I prefer the scissors in the top drawer",
                "correction (high): you should open the drawer first",
                "ambiguity: the drawer -> top drawer",
            ]
        )
        entries = distiller.distill_plan(
            instruction="Put the scissors into the drawer",
            history_text=history,
            final_plan='1: "Open the top drawer", 2: "Pick up the scissors", '
            '3: "Put down the scissors into the top drawer"',
            state_updates={"top drawer": "open"},
            provenance={"session": "s", "iteration": 0},
        )
        entry = entries[0]
        assert entry.kind == "plan"
        assert entry.robot_constraints == ["the robot can only use one hand"]
        assert entry.preferences == ["I prefer the scissors in the top drawer"]
        assert len(entry.constraints) == 2
        assert any("before the other sub-tasks" in c for c in entry.constraints)
        assert any("'the drawer' refers to the top drawer." == c for c in entry.constraints)


def oracle_best(query_feature, entries, threshold):
    """Brute-force reference for the visual stage."""
    scored = []
    for entry in entries:
        feature = entry.feature()
        if feature:
            scored.append((kn.cosine(query_feature, feature), entry))
    if not scored:
        return None
    best_sim, best = max(scored, key=lambda p: p[0])
    return best if best_sim >= threshold else None


class TestRetriever:
    def _embedder(self):
        return kn.TextEmbedder(dim=16, seed=0)

    def _retriever(self):
        return kn.Retriever(scripted_gateway(), embedder=self._embedder())

    def test_semantic_gate_blocks_other_categories(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer", feature=(1.0, 0.0)))
        result = self._retriever().retrieve("Pick up the spoon", (1.0, 0.0), kb)
        assert result.specific is None

    def test_two_drawer_mismatch_then_match(self):
        e = self._embedder()
        knob = e.embed("round metal knob")
        handle = e.embed("horizontal bar handle")
        retriever = self._retriever()
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer", feature=knob))

        miss = retriever.retrieve("Open the bottom drawer", handle, kb)
        assert miss.specific is oracle_best(handle, kb.list("skill"), 0.8) is None

        kb.put(skill_entry("Open the bottom drawer", feature=handle))
        hit = retriever.retrieve("Open the bottom drawer", handle, kb)
        assert hit.specific is not None
        assert hit.specific.key == "Open the bottom drawer"
        assert hit.specific is oracle_best(handle, kb.list("skill"), 0.8)

    def test_visual_argmax_matches_oracle(self):
        e = self._embedder()
        features = {
            "Open the top drawer": e.embed("round metal knob"),
            "Open the bottom drawer": e.embed("horizontal bar handle"),
            "Open the cabinet": e.embed("vertical bar handle"),
        }
        kb = kn.KnowledgeBase()
        for key, feature in features.items():
            kb.put(skill_entry(key, feature=feature))
        retriever = self._retriever()
        for query_text in ("round metal knob", "horizontal bar handle", "vertical bar handle"):
            query = e.embed(query_text)
            got = retriever.retrieve("Open the top drawer", query, kb)
            assert got.specific is oracle_best(query, kb.list("skill"), 0.8), query_text

    def test_without_visual_falls_back_to_oldest_survivor(self):
        e = self._embedder()
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer", feature=e.embed("round metal knob")))
        kb.put(skill_entry("Open the bottom drawer", feature=e.embed("horizontal bar handle")))
        result = self._retriever().retrieve(
            "Open the bottom drawer", e.embed("horizontal bar handle"), kb, use_visual=False
        )
        assert result.specific.key == "Open the top drawer"

    def test_missing_query_feature_falls_back_to_oldest_survivor(self):
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer", feature=(1.0, 0.0)))
        result = self._retriever().retrieve("Open the bottom drawer", None, kb)
        assert result.specific.key == "Open the top drawer"

    def test_global_knowledge_always_returned(self):
        kb = kn.KnowledgeBase()
        kb.put(
            kn.KnowledgeEntry(
                key="Tidy up the table",
                kind="plan",
                robot_constraints=["the robot can only use one hand"],
            )
        )
        result = self._retriever().retrieve("Pick up the fork", None, kb)
        assert result.global_knowledge.robot_constraints == ["the robot can only use one hand"]
        assert result.specific is None

    def test_empty_kb(self):
        result = self._retriever().retrieve("Open the drawer", (1.0, 0.0), kn.KnowledgeBase())
        assert result.specific is None
        assert result.global_knowledge.robot_constraints == []

    def test_visual_semantic_retrieve(self):
        e = self._embedder()
        knob = e.embed("round metal knob")
        handle = e.embed("horizontal bar handle")
        kb = kn.KnowledgeBase()
        kb.put(skill_entry("Open the top drawer", feature=knob))
        kb.put(skill_entry("Open the bottom drawer", feature=handle))
        retriever = kn.Retriever(
            scripted_gateway(),
            cross_modal={"knob": knob, "handle": handle},
            embedder=e,
        )
        got = retriever.visual_semantic_retrieve("the drawer with the knob", kb)
        assert got.key == "Open the top drawer"
        assert retriever.visual_semantic_retrieve("the red box", kb) is None
        with pytest.raises(kn.KnowledgeError):
            retriever.visual_semantic_retrieve("  ", kb)

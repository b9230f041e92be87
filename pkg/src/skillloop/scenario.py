"""Scenario files: scene fixtures, task sequences, user policy, backend rules.

A scenario is a UTF-8 JSON document with four sections:

- ``scene``: object records (with optional articulation and feature text) and
  optional per-iteration ``variations``;
- ``tasks``: ordered instructions, each with a mode (``execute`` or
  ``plan_only``) and declarative oracle checks;
- ``user_policy``: scripted-user tolerances and shared oracle checks;
- ``backend_rules``: rule tables for the scripted language-model backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import sim
from .geometry import vec3
from .knowledge import TextEmbedder

CHECK_KINDS = (
    "require_order",
    "require_destination",
    "forbid_destination",
    "forbid_conjunction",
    "require_same_destination",
)

TASK_MODES = ("execute", "plan_only")


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class OracleCheck:
    """One declarative plan constraint the scripted user enforces."""

    kind: str
    correction: str
    # Meaning depends on kind: ordering -> skill that must come first;
    # destination checks -> the container label.
    subject: str = ""
    objects: tuple[str, ...] = ()


@dataclass(frozen=True)
class TaskSpec:
    instruction: str
    mode: str = "execute"
    checks: tuple[OracleCheck, ...] = ()
    # Object ids whose state the planner prompt may mention; None = all.
    known_states: Optional[tuple[str, ...]] = None


@dataclass
class ScenarioSpec:
    id: str
    title: str
    scene: dict
    tasks: list[TaskSpec]
    user_policy: dict = field(default_factory=dict)
    backend_rules: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        try:
            scene = doc["scene"]
            raw_tasks = doc["tasks"]
        except KeyError as exc:
            raise ScenarioError(f"scenario missing section {exc}") from exc
        if not isinstance(raw_tasks, list) or not raw_tasks:
            raise ScenarioError("tasks must be a non-empty list")
        policy = doc.get("user_policy", {})
        shared_checks = tuple(_parse_check(c) for c in policy.get("checks", []))
        tasks = []
        for raw in raw_tasks:
            mode = raw.get("mode", "execute")
            if mode not in TASK_MODES:
                raise ScenarioError(f"unknown task mode {mode!r}")
            known = raw.get("known_states")
            tasks.append(
                TaskSpec(
                    instruction=raw["instruction"],
                    mode=mode,
                    checks=shared_checks + tuple(_parse_check(c) for c in raw.get("checks", [])),
                    known_states=tuple(known) if known is not None else None,
                )
            )
        spec = cls(
            id=doc.get("id", ""),
            title=doc.get("title", doc.get("id", "")),
            scene=scene,
            tasks=tasks,
            user_policy=policy,
            backend_rules=doc.get("backend_rules", {}),
        )
        if not spec.id:
            raise ScenarioError("scenario needs an id")
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario: {exc}") from exc
        except ValueError as exc:
            raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def validate(self) -> None:
        ids = [o["id"] for o in self.scene.get("objects", [])]
        if len(ids) != len(set(ids)):
            raise ScenarioError("duplicate object ids in scene")
        known = set(ids)
        for obj in self.scene.get("objects", []):
            inside = obj.get("inside_of")
            if inside is not None and inside not in known:
                raise ScenarioError(f"object {obj['id']!r} is inside unknown {inside!r}")
        for iteration, overrides in self.scene.get("variations", {}).items():
            if not str(iteration).isdigit():
                raise ScenarioError(f"variation key {iteration!r} is not an iteration number")
            for object_id in overrides:
                if object_id not in known:
                    raise ScenarioError(f"variation references unknown object {object_id!r}")
        for task in self.tasks:
            for object_id in task.known_states or ():
                if object_id not in known:
                    raise ScenarioError(f"known_states references unknown object {object_id!r}")
        # Building iteration 1 exercises the simulator's own invariants.
        self.build_world(1)

    def build_world(self, iteration: int, embedder: Optional[TextEmbedder] = None) -> sim.WorldState:
        if iteration < 1:
            raise ScenarioError("iterations start at 1")
        embedder = embedder or TextEmbedder()
        overrides = self.scene.get("variations", {}).get(str(iteration), {})
        objects = {}
        for raw in self.scene.get("objects", []):
            doc = dict(raw)
            doc.update(overrides.get(doc["id"], {}))
            objects[doc["id"]] = _build_object(doc, embedder)
        workspace = self.scene.get(
            "workspace", {"min": [-1.0, -1.0, 0.0], "max": [1.0, 1.0, 1.0]}
        )
        gripper_doc = self.scene.get("gripper", {})
        gripper = sim.GripperState(
            pose=sim.Pose(
                position=vec3(gripper_doc.get("position", [0.0, 0.0, 0.3])),
                approach=gripper_doc.get("approach", "top-down"),
                roll=float(gripper_doc.get("roll", 0.0)),
            ),
            aperture=gripper_doc.get("aperture", "open"),
        )
        world = sim.WorldState(
            objects=objects,
            gripper=gripper,
            workspace=(vec3(workspace["min"]), vec3(workspace["max"])),
        )
        try:
            world.validate()
        except sim.SimError as exc:
            raise ScenarioError(f"invalid scene: {exc}") from exc
        return world

    def states_text(self, world: sim.WorldState, task: TaskSpec) -> str:
        """Object-state summary for planner prompts; 'N/A' when nothing is known."""
        visible = task.known_states
        parts = []
        for object_id in sorted(world.objects):
            if visible is not None and object_id not in visible:
                continue
            record = world.objects[object_id]
            parts.append(f"{record.label}({object_state(world, record)})")
        return ", ".join(parts) or "N/A"


def object_state(world: sim.WorldState, record: sim.ObjectRecord) -> str:
    cfg = sim.DEFAULT_CONFIG.sim
    if record.articulation is not None:
        fraction = record.articulation.open_fraction
        if fraction >= cfg.open_success_fraction:
            return "open"
        if fraction <= cfg.close_success_fraction:
            return "closed"
        return "ajar"
    if record.inside_of is not None:
        return f"in {world.objects[record.inside_of].label}"
    return "on table"


def _parse_check(doc: dict) -> OracleCheck:
    kind = doc.get("kind")
    if kind not in CHECK_KINDS:
        raise ScenarioError(f"unknown oracle check kind {kind!r}")
    if not doc.get("correction"):
        raise ScenarioError(f"oracle check {kind!r} needs a correction text")
    return OracleCheck(
        kind=kind,
        correction=doc["correction"],
        subject=doc.get("subject", ""),
        objects=tuple(doc.get("objects", [])),
    )


def _build_object(doc: dict, embedder: TextEmbedder) -> sim.ObjectRecord:
    articulation = None
    if "articulation" in doc and doc["articulation"] is not None:
        art = doc["articulation"]
        articulation = sim.Prismatic(
            axis=vec3(art["axis"]),
            travel_max=float(art["travel_max"]),
            open_fraction=float(art.get("open_fraction", 0.0)),
        )
    feature: tuple[float, ...] = ()
    if doc.get("feature"):
        feature = tuple(float(v) for v in doc["feature"])
    elif doc.get("feature_text"):
        feature = embedder.embed(doc["feature_text"])
    try:
        return sim.ObjectRecord(
            id=doc["id"],
            label=doc["label"],
            category=doc.get("category", "item"),
            pose=sim.Pose(
                position=vec3(doc["position"]),
                approach=doc.get("approach", "top-down"),
                roll=float(doc.get("roll", 0.0)),
            ),
            extents=vec3(doc.get("extents", [0.05, 0.05, 0.05])),
            normal=vec3(doc.get("normal", [0.0, 0.0, 1.0])),
            grasp_point=vec3(doc.get("grasp_point", [0.0, 0.0, 0.0])),
            grasp_orientation=doc.get("grasp_orientation", "top-down"),
            articulation=articulation,
            contains=list(doc.get("contains", [])),
            inside_of=doc.get("inside_of"),
            feature=feature,
        )
    except KeyError as exc:
        raise ScenarioError(f"scene object missing field {exc}") from exc


def load_suite(path) -> list[ScenarioSpec]:
    """Load one scenario file or every ``*.json`` scenario in a directory."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        if not files:
            raise ScenarioError(f"no scenario files in {p}")
        return [ScenarioSpec.load(f) for f in files]
    return [ScenarioSpec.load(p)]

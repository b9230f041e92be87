"""Deterministic tabletop world: objects, gripper, primitives, success predicates.

The world is a pure value: :func:`apply` deep-copies before mutating, so two
applications of the same primitive to the same world produce bit-identical
results, and failed primitives leave the input untouched.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .config import SimConfig, DEFAULT_CONFIG
from .geometry import Vec3, add, dot, is_finite, norm, scale, sub, vec3

APPROACH_LABELS = ("top-down", "front", "side-left", "side-right")

_STOPWORDS = {"the", "a", "an", "of"}


class SimError(Exception):
    """Base class for simulator failures."""


class NotFound(SimError):
    pass


class Ambiguous(SimError):
    """Two or more objects match a perception query equally well."""


class OutOfWorkspace(SimError):
    pass


class InvalidPull(SimError):
    pass


class ContainerClosed(SimError):
    pass


class UnknownSkillCategory(SimError):
    pass


class InvariantViolation(SimError):
    pass


@dataclass
class Pose:
    position: Vec3
    approach: str = "top-down"
    roll: float = 0.0

    def validate(self) -> None:
        if not is_finite(self.position):
            raise InvariantViolation("pose position must be finite")
        if self.approach not in APPROACH_LABELS:
            raise InvariantViolation(f"unknown approach label {self.approach!r}")
        if not -180.0 <= self.roll <= 180.0:
            raise InvariantViolation("roll must be in [-180, 180]")


@dataclass
class Prismatic:
    axis: Vec3
    travel_max: float
    open_fraction: float = 0.0


@dataclass
class ObjectRecord:
    id: str
    label: str
    category: str
    pose: Pose
    extents: Vec3
    normal: Vec3 = (0.0, 0.0, 1.0)
    grasp_point: Vec3 = (0.0, 0.0, 0.0)  # object-local offset
    grasp_orientation: str = "top-down"
    articulation: Optional[Prismatic] = None
    contains: list[str] = field(default_factory=list)
    inside_of: Optional[str] = None
    feature: tuple[float, ...] = ()

    def grasp_point_world(self) -> Vec3:
        return add(self.pose.position, self.grasp_point)

    def validate(self) -> None:
        self.pose.validate()
        if abs(norm(self.normal) - 1.0) > 1e-9:
            raise InvariantViolation(f"{self.id}: normal must be unit length")
        if any(e <= 0.0 for e in self.extents):
            raise InvariantViolation(f"{self.id}: extents must be strictly positive")
        if self.articulation is not None:
            if not 0.0 <= self.articulation.open_fraction <= 1.0:
                raise InvariantViolation(f"{self.id}: open_fraction outside [0, 1]")


@dataclass
class GripperState:
    pose: Pose
    aperture: str = "open"  # "open" | "closed"
    holding: Optional[str] = None
    hold_offset: Vec3 = (0.0, 0.0, 0.0)  # held object position - gripper position


@dataclass
class WorldState:
    objects: dict[str, ObjectRecord]
    gripper: GripperState
    workspace: tuple[Vec3, Vec3]  # (min corner, max corner)
    tick: int = 0

    def object(self, object_id: str) -> ObjectRecord:
        try:
            return self.objects[object_id]
        except KeyError:
            raise NotFound(f"no object with id {object_id!r}") from None

    def in_workspace(self, p: Vec3) -> bool:
        lo, hi = self.workspace
        return all(lo[i] <= p[i] <= hi[i] for i in range(3))

    def validate(self) -> None:
        for obj in self.objects.values():
            obj.validate()
            if not self.in_workspace(obj.pose.position):
                raise InvariantViolation(f"{obj.id}: position outside workspace")
            if obj.inside_of is not None and obj.id not in self.objects[obj.inside_of].contains:
                raise InvariantViolation(f"{obj.id}: containment links inconsistent")
        for obj in self.objects.values():
            for child in obj.contains:
                if self.objects[child].inside_of != obj.id:
                    raise InvariantViolation(f"{obj.id}: contains/inside_of mismatch")
        if self.gripper.holding is not None and self.gripper.aperture != "closed":
            raise InvariantViolation("holding implies a closed gripper")


# --- primitives -------------------------------------------------------------


@dataclass
class MoveTo:
    pose: Pose


@dataclass
class MoveBy:
    delta: Vec3


@dataclass
class SetAperture:
    aperture: str  # "open" | "closed"


@dataclass
class Pull:
    object_id: str
    direction: Vec3
    distance: float


@dataclass
class PlaceAt:
    object_id: str
    target: Union[str, Vec3]


Primitive = Union[MoveTo, MoveBy, SetAperture, Pull, PlaceAt]


@dataclass
class Event:
    kind: str
    detail: dict


# --- perception -------------------------------------------------------------


def _tokens(text: str) -> frozenset[str]:
    words = re.findall(r"[a-z0-9]+", text.lower())
    return frozenset(w for w in words if w not in _STOPWORDS)


def _match_score(query: frozenset[str], obj: ObjectRecord) -> int:
    label = _tokens(obj.label)
    if query == label:
        return 3
    if query and label and (label <= query or query <= label):
        return 2
    if obj.category and _tokens(obj.category) <= query:
        return 1
    return 0


def detect(world: WorldState, label: str) -> str:
    """Return the id of the object whose label best matches the query.

    Scoring: exact token match > token containment > category match, with a
    lexicographic id tie-break only to order equally named candidates before
    the ambiguity check.
    """
    if not label.strip():
        raise NotFound("empty perception query")
    query = _tokens(label)
    scored = sorted(
        ((_match_score(query, obj), obj.id) for obj in world.objects.values()),
        key=lambda t: (-t[0], t[1]),
    )
    if not scored or scored[0][0] == 0:
        raise NotFound(f"no object matching {label!r}")
    if len(scored) > 1 and scored[1][0] == scored[0][0]:
        raise Ambiguous(f"query {label!r} matches multiple objects equally well")
    return scored[0][1]


# --- transitions ------------------------------------------------------------


def _move_gripper(world: WorldState, target: Pose) -> None:
    if not world.in_workspace(target.position):
        raise OutOfWorkspace(f"target {target.position} outside workspace")
    target.validate()
    world.gripper.pose = target
    if world.gripper.holding is not None:
        held = world.object(world.gripper.holding)
        held.pose.position = add(target.position, world.gripper.hold_offset)


def _container_open(obj: ObjectRecord, cfg: SimConfig) -> bool:
    if obj.articulation is None:
        return True
    return obj.articulation.open_fraction >= cfg.open_success_fraction


def _graspable(world: WorldState, obj: ObjectRecord, cfg: SimConfig) -> bool:
    if obj.inside_of is not None and not _container_open(world.object(obj.inside_of), cfg):
        return False
    return True


def apply(
    world: WorldState, p: Primitive, cfg: SimConfig = DEFAULT_CONFIG.sim
) -> tuple[WorldState, Event]:
    """Apply one primitive, returning a fresh world and an event.

    Pure transition: identical inputs give bit-identical outputs, and any
    raised error leaves the input world unchanged.
    """
    w = copy.deepcopy(world)
    if isinstance(p, MoveTo):
        _move_gripper(w, copy.deepcopy(p.pose))
        event = Event("moved", {"position": w.gripper.pose.position})
    elif isinstance(p, MoveBy):
        pose = w.gripper.pose
        target = Pose(add(pose.position, vec3(p.delta)), pose.approach, pose.roll)
        _move_gripper(w, target)
        event = Event("moved", {"position": w.gripper.pose.position})
    elif isinstance(p, SetAperture):
        if p.aperture not in ("open", "closed"):
            raise SimError(f"bad aperture {p.aperture!r}")
        if p.aperture == "open":
            w.gripper.aperture = "open"
            w.gripper.holding = None
            w.gripper.hold_offset = (0.0, 0.0, 0.0)
            event = Event("released", {})
        else:
            w.gripper.aperture = "closed"
            grabbed = _try_grasp(w, cfg)
            event = Event("closed", {"holding": grabbed})
    elif isinstance(p, Pull):
        event = _apply_pull(w, p)
    elif isinstance(p, PlaceAt):
        event = _apply_place(w, p, cfg)
    else:  # pragma: no cover - closed primitive set
        raise SimError(f"unknown primitive {p!r}")
    w.tick = world.tick + 1
    return w, event


def _try_grasp(w: WorldState, cfg: SimConfig) -> Optional[str]:
    if w.gripper.holding is not None:
        return w.gripper.holding
    gp = w.gripper.pose.position
    best: Optional[ObjectRecord] = None
    best_d = math.inf
    for obj in sorted(w.objects.values(), key=lambda o: o.id):
        if not _graspable(w, obj, cfg):
            continue
        d = norm(sub(obj.grasp_point_world(), gp))
        if d < best_d:
            best, best_d = obj, d
    if best is None or best_d > cfg.grasp_tolerance:
        return None
    if best.grasp_orientation != w.gripper.pose.approach:
        return None
    w.gripper.holding = best.id
    w.gripper.hold_offset = sub(best.pose.position, gp)
    return best.id


def _apply_pull(w: WorldState, p: Pull) -> Event:
    if w.gripper.holding != p.object_id:
        raise InvalidPull(f"not holding {p.object_id!r}")
    obj = w.object(p.object_id)
    art = obj.articulation
    if art is None:
        raise InvalidPull(f"{p.object_id!r} is not articulated")
    direction = vec3(p.direction)
    if norm(direction) == 0.0:
        raise InvalidPull("pull direction must be non-zero")
    direction = scale(direction, 1.0 / norm(direction))
    alignment = dot(direction, art.axis)
    old = art.open_fraction
    if alignment > 0.9:
        new = min(1.0, old + p.distance / art.travel_max)
    elif alignment < -0.9:
        new = max(0.0, old - p.distance / art.travel_max)
    else:
        new = old
    art.open_fraction = new
    # The handle (and the gripper holding it) travels with the drawer front.
    travel = scale(art.axis, (new - old) * art.travel_max)
    obj.pose.position = add(obj.pose.position, travel)
    w.gripper.pose.position = add(w.gripper.pose.position, travel)
    return Event("pulled", {"open_fraction": new})


def _apply_place(w: WorldState, p: PlaceAt, cfg: SimConfig) -> Event:
    obj = w.object(p.object_id)
    if isinstance(p.target, str):
        container = w.object(p.target)
        if not _container_open(container, cfg):
            raise ContainerClosed(f"{container.id!r} is not open")
        target_pos = add(container.pose.position, (0.0, 0.0, 0.02))
        # Unlink from any previous container first.
        if obj.inside_of is not None:
            prev = w.object(obj.inside_of)
            prev.contains = [c for c in prev.contains if c != obj.id]
        obj.inside_of = container.id
        if obj.id not in container.contains:
            container.contains.append(obj.id)
    else:
        target_pos = vec3(p.target)
        if not w.in_workspace(target_pos):
            raise OutOfWorkspace(f"place target {target_pos} outside workspace")
        if obj.inside_of is not None:
            prev = w.object(obj.inside_of)
            prev.contains = [c for c in prev.contains if c != obj.id]
            obj.inside_of = None
    obj.pose.position = target_pos
    if w.gripper.holding == obj.id:
        w.gripper.holding = None
        w.gripper.hold_offset = (0.0, 0.0, 0.0)
    w.gripper.aperture = "open"
    w.gripper.pose.position = add(target_pos, (0.0, 0.0, 0.05))
    return Event("placed", {"object": obj.id, "at": target_pos})


# --- skill success ----------------------------------------------------------

_SKILL_PATTERNS = [
    ("open", re.compile(r"^open\s+(?:the\s+)?(?P<obj>.+)$")),
    ("close", re.compile(r"^close\s+(?:the\s+)?(?P<obj>.+)$")),
    ("pick up", re.compile(r"^pick\s+up\s+(?:the\s+)?(?P<obj>.+)$")),
    (
        "put",
        re.compile(
            r"^put\s+(?:down\s+)?(?:the\s+)?(?P<obj>.+?)\s+(?:into|in|onto|on)\s+(?:the\s+)?(?P<container>.+)$"
        ),
    ),
    ("hang", re.compile(r"^hang\s+(?:the\s+)?(?P<obj>.+?)\s+on\s+(?:the\s+)?(?P<container>.+)$")),
]


def parse_skill(skill: str) -> tuple[str, str, Optional[str]]:
    """Split a skill description into (category, object label, container label)."""
    text = skill.strip().rstrip(".").lower()
    for category, pattern in _SKILL_PATTERNS:
        m = pattern.match(text)
        if m:
            container = m.groupdict().get("container")
            return category, m.group("obj"), container
    raise UnknownSkillCategory(f"cannot categorize skill {skill!r}")


def skill_success(
    world: WorldState, skill: str, cfg: SimConfig = DEFAULT_CONFIG.sim
) -> bool:
    """Category-specific, deterministic fulfillment predicate."""
    category, obj_label, container_label = parse_skill(skill)
    target = world.object(detect(world, obj_label))
    if category == "open":
        if target.articulation is None:
            raise UnknownSkillCategory(f"{target.id!r} is not openable")
        return target.articulation.open_fraction >= cfg.open_success_fraction
    if category == "close":
        if target.articulation is None:
            raise UnknownSkillCategory(f"{target.id!r} is not closable")
        return target.articulation.open_fraction <= cfg.close_success_fraction
    if category == "pick up":
        return world.gripper.holding == target.id
    # put / hang
    assert container_label is not None
    container = world.object(detect(world, container_label))
    return target.inside_of == container.id and world.gripper.aperture == "open"


# --- canonical serialization ------------------------------------------------


def _round(value, decimals: int):
    if isinstance(value, float):
        rounded = round(value, decimals)
        return 0.0 if rounded == 0.0 else rounded  # avoid -0.0
    if isinstance(value, (list, tuple)):
        return [_round(v, decimals) for v in value]
    if isinstance(value, dict):
        return {k: _round(v, decimals) for k, v in value.items()}
    return value


def world_to_dict(world: WorldState, cfg: SimConfig = DEFAULT_CONFIG.sim) -> dict:
    objects = {}
    for oid in sorted(world.objects):
        o = world.objects[oid]
        objects[oid] = {
            "label": o.label,
            "category": o.category,
            "position": list(o.pose.position),
            "approach": o.pose.approach,
            "roll": o.pose.roll,
            "extents": list(o.extents),
            "normal": list(o.normal),
            "grasp_point": list(o.grasp_point),
            "grasp_orientation": o.grasp_orientation,
            "articulation": None
            if o.articulation is None
            else {
                "axis": list(o.articulation.axis),
                "travel_max": o.articulation.travel_max,
                "open_fraction": o.articulation.open_fraction,
            },
            "contains": sorted(o.contains),
            "inside_of": o.inside_of,
            "feature": list(o.feature),
        }
    doc = {
        "objects": objects,
        "gripper": {
            "position": list(world.gripper.pose.position),
            "approach": world.gripper.pose.approach,
            "roll": world.gripper.pose.roll,
            "aperture": world.gripper.aperture,
            "holding": world.gripper.holding,
            "hold_offset": list(world.gripper.hold_offset),
        },
        "workspace": [list(world.workspace[0]), list(world.workspace[1])],
        "tick": world.tick,
    }
    return _round(doc, cfg.serial_decimals)


def serialize_world(world: WorldState, cfg: SimConfig = DEFAULT_CONFIG.sim) -> str:
    """Canonical JSON form: sorted keys, fixed decimal precision."""
    return json.dumps(world_to_dict(world, cfg), sort_keys=True, separators=(",", ":"))

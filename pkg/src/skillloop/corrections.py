"""Correction classification, history slicing, and spatial grounding.

A correction is first routed by level (plan vs. skill), then low-level
corrections are grounded into a displacement vector: dependence on past
interactions selects the relevant history slice, the reference frame is
resolved from the related object, and vague distance words are scaled by the
object's extent along the motion axis.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .config import GroundingConfig, DEFAULT_CONFIG
from .gateway import Gateway, PromptKind
from .geometry import Vec3, add, scale, norm, normalize, vec3
from . import dsl


class CorrectionError(Exception):
    pass


class EmptyHistory(CorrectionError):
    pass


class UngroundableCorrection(CorrectionError):
    pass


class Dependence(str, Enum):
    LAST = "last"
    INITIAL = "initial"
    NONE = "none"


@dataclass(frozen=True)
class HistoryEntry:
    skill: str
    correction: str
    level: str  # "high" | "low"
    adjustment: Vec3 = (0.0, 0.0, 0.0)
    magnitude: float = 0.0


@dataclass
class InteractionHistory:
    entries: list[HistoryEntry] = field(default_factory=list)

    def append(self, entry: HistoryEntry) -> None:
        self.entries.append(entry)

    def last(self) -> HistoryEntry:
        if not self.entries:
            raise EmptyHistory("no previous interactions")
        return self.entries[-1]

    def first_for_skill(self, skill: str) -> HistoryEntry:
        for entry in self.entries:
            if entry.skill == skill:
                return entry
        raise EmptyHistory(f"no previous interaction for skill {skill!r}")

    def lines(self) -> list[str]:
        return [f"correction ({e.level}): {e.correction}" for e in self.entries]


@dataclass(frozen=True)
class FrameResolution:
    frame: str  # "object-centric" | "absolute"
    forward: Vec3
    right: Vec3
    up: Vec3


@dataclass(frozen=True)
class Solution:
    kind: str  # "replan" | "adjust"
    correction: str
    dependence: Optional[Dependence] = None
    adjustment: Optional[Vec3] = None
    magnitude: float = 0.0


def classify_level(gateway: Gateway, correction: str, skill: str, plan_text: str) -> str:
    parsed = gateway.ask(
        PromptKind.LEVEL_CLASSIFY, correction=correction, skill=skill, plan=plan_text
    )
    return parsed["level"]


def classify_dependence(gateway: Gateway, correction: str) -> Dependence:
    parsed = gateway.ask(PromptKind.DEPENDENCE_CLASSIFY, correction=correction)
    return Dependence(parsed["dependence"])


def extract_context(
    history: InteractionHistory, dependence: Dependence, skill: str
) -> list[HistoryEntry]:
    """Select the minimal history slice the correction depends on."""
    if dependence is Dependence.NONE:
        return []
    if dependence is Dependence.LAST:
        return [history.last()]
    return [history.first_for_skill(skill)]


def resolve_frame(
    gateway: Gateway, correction: str, object_label: str, normal: Vec3
) -> FrameResolution:
    parsed = gateway.ask(
        PromptKind.FRAME_RESOLVE,
        correction=correction,
        object_label=object_label,
        normal=dsl.format_value(vec3(normal)),
    )
    return FrameResolution(
        frame=parsed["frame"],
        forward=parsed["forward"],
        right=parsed["right"],
        up=parsed["up"],
    )


_DIRECTION_WORDS: dict[str, tuple[str, float]] = {
    "right": ("right", 1.0),
    "left": ("right", -1.0),
    "forward": ("forward", 1.0),
    "forwards": ("forward", 1.0),
    "backward": ("forward", -1.0),
    "backwards": ("forward", -1.0),
    "back": ("forward", -1.0),
    "up": ("up", 1.0),
    "higher": ("up", 1.0),
    "down": ("up", -1.0),
    "lower": ("up", -1.0),
}

_UNIT_RE = re.compile(r"(\d+(?:\.\d+)?)\s*(cm|centimeters?|mm|millimeters?|m|meters?)\b")
_UNIT_SCALE = {"cm": 0.01, "centimeter": 0.01, "mm": 0.001, "millimeter": 0.001, "m": 1.0, "meter": 1.0}
_REPEAT_RE = re.compile(r"\bmore\b|\bagain\b|keep going|keep pulling|keep moving")


def direction_word(correction: str) -> Optional[str]:
    for token in re.findall(r"[a-z]+", correction.lower()):
        if token in _DIRECTION_WORDS:
            return token
    return None


def is_repeat(correction: str) -> bool:
    return bool(_REPEAT_RE.search(correction.lower()))


def extent_along(axis: Vec3, extents: Vec3) -> float:
    unit = normalize(axis)
    return sum(abs(a) * e for a, e in zip(unit, extents))


def ground_magnitude(
    correction: str,
    axis: Vec3,
    extents: Vec3,
    context: list[HistoryEntry],
    cfg: GroundingConfig = DEFAULT_CONFIG.grounding,
) -> float:
    """Turn the correction's distance phrase into meters along the motion axis."""
    text = correction.lower()
    m = _UNIT_RE.search(text)
    if m:
        unit = m.group(2).rstrip("s")
        return float(m.group(1)) * _UNIT_SCALE[unit]
    if is_repeat(text):
        if not context:
            raise EmptyHistory(f"correction {correction!r} refers to a missing interaction")
        return context[-1].magnitude
    if "tiny" in text:
        return cfg.tiny_bit_factor * extent_along(axis, extents)
    # Bare directions and "a little bit" share the small default step.
    return cfg.little_bit_factor * extent_along(axis, extents)


@dataclass(frozen=True)
class GroundedAdjustment:
    vector: Vec3
    magnitude: float
    frame: str


def ground(
    gateway: Gateway,
    correction: str,
    object_label: str,
    normal: Vec3,
    extents: Vec3,
    context: list[HistoryEntry],
    cfg: GroundingConfig = DEFAULT_CONFIG.grounding,
) -> GroundedAdjustment:
    """Resolve a low-level correction into a world-frame displacement."""
    word = direction_word(correction)
    if word is None:
        if not is_repeat(correction):
            raise UngroundableCorrection(f"no direction in correction {correction!r}")
        if not context:
            raise EmptyHistory(f"correction {correction!r} refers to a missing interaction")
        previous = context[-1]
        if norm(previous.adjustment) == 0.0:
            raise UngroundableCorrection(
                f"previous interaction for {correction!r} has no displacement"
            )
        axis = normalize(previous.adjustment)
        magnitude = ground_magnitude(correction, axis, extents, context, cfg)
        return GroundedAdjustment(scale(axis, magnitude), magnitude, "object-centric")
    frame = resolve_frame(gateway, correction, object_label, normal)
    axis_name, sign = _DIRECTION_WORDS[word]
    axis = scale(getattr(frame, axis_name), sign)
    magnitude = ground_magnitude(correction, axis, extents, context, cfg)
    return GroundedAdjustment(scale(axis, magnitude), magnitude, frame.frame)


class CorrectionHandler:
    """Full routing pipeline: level, dependence, context, grounding."""

    def __init__(self, gateway: Gateway, cfg: GroundingConfig = DEFAULT_CONFIG.grounding):
        self.gateway = gateway
        self.cfg = cfg

    def handle(
        self,
        correction: str,
        skill: str,
        plan_text: str,
        history: InteractionHistory,
        object_label: str,
        normal: Vec3,
        extents: Vec3,
    ) -> Solution:
        level = classify_level(self.gateway, correction, skill, plan_text)
        if level == "high":
            return Solution(kind="replan", correction=correction)
        dependence = classify_dependence(self.gateway, correction)
        context = extract_context(history, dependence, skill)
        grounded = ground(
            self.gateway, correction, object_label, normal, extents, context, self.cfg
        )
        return Solution(
            kind="adjust",
            correction=correction,
            dependence=dependence,
            adjustment=grounded.vector,
            magnitude=grounded.magnitude,
        )

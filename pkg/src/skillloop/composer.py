"""Skill-program composition and correction-driven recomposition."""

from __future__ import annotations

import logging
from typing import Optional

from . import dsl, sim
from .gateway import Gateway, PromptKind
from .knowledge import PARAMETER_REGISTRY, KnowledgeEntry

log = logging.getLogger(__name__)


class ComposeError(Exception):
    pass


def object_info_blob(record: Optional[sim.ObjectRecord]) -> str:
    """Serialize the scene facts the composer prompt needs about one object."""
    if record is None:
        return "none"
    parts = [f'orientation="{record.grasp_orientation}"']
    if record.articulation is not None:
        axis = dsl.format_value(record.articulation.axis)
        parts.append(f"axis={axis}")
        parts.append(f"travel_max={dsl.format_value(record.articulation.travel_max)}")
    return "; ".join(parts)


def parameter_lines(entry: Optional[KnowledgeEntry]) -> str:
    """Render saved task parameters as prompt lines, skipping unknown names."""
    if entry is None or not entry.task_params:
        return "none"
    lines = []
    for name in sorted(entry.task_params):
        if name not in PARAMETER_REGISTRY:
            log.warning("skipping unregistered task parameter %r", name)
            continue
        value = entry.task_params[name]
        if isinstance(value, str):
            lines.append(f'- {name} = "{value}"')
        elif isinstance(value, (list, tuple)):
            lines.append(f"- {name} = {dsl.format_value(tuple(float(v) for v in value))}")
        else:
            lines.append(f"- {name} = {dsl.format_value(float(value))}")
    return "\n".join(lines) or "none"


def _parse_program(text: str) -> dsl.Program:
    try:
        return dsl.parse(text)
    except dsl.ParseError as exc:
        raise ComposeError(f"composed program does not parse: {exc}") from exc


class Composer:
    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def compose(
        self,
        skill: str,
        world: sim.WorldState,
        entry: Optional[KnowledgeEntry] = None,
    ) -> dsl.Program:
        category, obj_label, container_label = sim.parse_skill(skill)
        # The grasped/placed target drives the prompt's object information.
        info_label = container_label if category in ("put", "hang") else obj_label
        record = None
        try:
            record = world.object(sim.detect(world, info_label))
        except sim.NotFound:
            pass  # compose can still emit a program; detect fails at run time
        parsed = self.gateway.ask(
            PromptKind.COMPOSE,
            skill=skill,
            object_info=object_info_blob(record),
            parameters=parameter_lines(entry),
        )
        return _parse_program(parsed["program"])

    def recompose(
        self,
        skill: str,
        remaining: dsl.Program,
        context: str,
        correction: str,
        adjustment: str,
    ) -> dsl.Program:
        parsed = self.gateway.ask(
            PromptKind.RECOMPOSE,
            skill=skill,
            program=dsl.format_program(remaining),
            context=context or "none",
            correction=correction,
            adjustment=adjustment or "none",
        )
        program_text = parsed["program"]
        try:
            from .scripted_rules import free_identifiers

            return dsl.parse(program_text, known=free_identifiers(program_text))
        except dsl.ParseError as exc:
            raise ComposeError(f"recomposed program does not parse: {exc}") from exc

"""Plan generation and revision through the language-model gateway."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from . import sim
from .gateway import Gateway, PromptKind, render_constraints
from .knowledge import GlobalKnowledge, KnowledgeEntry


class PlanError(Exception):
    pass


class PlanInvalid(PlanError):
    pass


@dataclass(frozen=True)
class Plan:
    skills: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.skills)

    def numbered(self) -> str:
        return ", ".join(f'{i}: "{s}"' for i, s in enumerate(self.skills, start=1))


def validate_skills(skills: Sequence[str]) -> None:
    """Reject plans that violate the one-object-per-sub-task constraint."""
    if not skills:
        raise PlanInvalid("plan has no sub-tasks")
    for skill in skills:
        try:
            _, obj, container = sim.parse_skill(skill)
        except sim.UnknownSkillCategory as exc:
            raise PlanInvalid(str(exc)) from exc
        for label in (obj, container):
            if label and (" and " in label or label.endswith(" and")):
                raise PlanInvalid(f"sub-task {skill!r} manipulates more than one object")


def render_retrieved(
    entries: Union[KnowledgeEntry, Sequence[KnowledgeEntry], None],
    global_knowledge: Optional[GlobalKnowledge] = None,
) -> str:
    """Format retrieved knowledge as a prompt block; empty string when absent."""
    if entries is None:
        entries = []
    elif isinstance(entries, KnowledgeEntry):
        entries = [entries]
    lines: list[str] = []
    if global_knowledge is not None:
        lines.extend(global_knowledge.robot_constraints)
        lines.extend(global_knowledge.preferences)
    for entry in entries:
        for item in entry.constraints + entry.preferences:
            if item not in lines:
                lines.append(item)
    if not lines:
        return ""
    return "Saved knowledge from previous tasks:\n" + "".join(f"- {l}\n" for l in lines)


class Planner:
    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def plan(
        self,
        instruction: str,
        object_states: str = "N/A",
        constraints: Sequence[str] = (),
        retrieved: str = "",
    ) -> Plan:
        parsed = self.gateway.ask(
            PromptKind.PLAN,
            instruction=instruction,
            object_states=object_states or "N/A",
            constraints=render_constraints(list(constraints)),
            retrieved=retrieved,
        )
        validate_skills(parsed["skills"])
        return Plan(tuple(parsed["skills"]))

    def replan(
        self,
        instruction: str,
        original: Plan,
        completed: Sequence[str],
        current_skill: str,
        correction: str,
        object_states: str = "N/A",
        constraints: Sequence[str] = (),
        retrieved: str = "",
    ) -> Plan:
        parsed = self.gateway.ask(
            PromptKind.REPLAN,
            instruction=instruction,
            object_states=object_states or "N/A",
            constraints=render_constraints(list(constraints)),
            retrieved=retrieved,
            original_plan=original.numbered(),
            completed_skills="\n".join(completed) or "none",
            current_skill=current_skill,
            correction=correction,
        )
        validate_skills(parsed["skills"])
        return Plan(tuple(parsed["skills"]))

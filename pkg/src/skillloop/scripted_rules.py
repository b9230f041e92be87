"""Deterministic rule tables behind the scripted backend.

Each prompt kind has a rule function that computes a reply *in the same text
schema a remote model would produce*, so the reply parsers are exercised on
every call.  Rules operate on the request fields plus per-scenario tables
(planner quirks, base plans, category membership, type groups, alternate
destinations).
"""

from __future__ import annotations

import re
from typing import Optional

from . import dsl, sim
from .gateway import ModelFormatError, PromptKind
from .geometry import cross, norm, normalize, scale, vec3

DIRECTION_WORDS = ("left", "right", "forward", "backward", "back", "up", "down")

_VAGUE_PHRASES = ("a bit", "a little", "more", "keep going", "continue", "tiny bit")
_UNIT_RE = re.compile(r"\d+(?:\.\d+)?\s*(cm|mm|m)\b")

_VERB_CATEGORY = {
    "open": "open",
    "close": "close",
    "pick": "pick",
    "put": "put",
    "place": "put",
    "hang": "put",
    "sort": "put",
    "set": "put",
    "bring": "put",
    "clean": "put",
    "make": "put",
    "stack": "put",
    "arrange": "put",
}

_OPENABLE_WORDS = ("drawer", "fridge", "cabinet")

# Common-sense object category membership available to every scenario; the
# per-scenario tables may extend or override these under "category_members".
DEFAULT_CATEGORY_MEMBERS = {
    "tablewares": ["spoon", "fork", "knife", "plate", "cup", "mug", "bowl"],
    "stationery": ["scissors", "marker", "pen", "pencil", "tape", "stapler", "yellow marker"],
}


def answer(kind: PromptKind, fields: dict[str, str], tables: dict) -> str:
    handler = _HANDLERS.get(kind)
    if handler is None:  # pragma: no cover - closed kind set
        raise ModelFormatError(f"no scripted rule for {kind.value}")
    return handler(fields, tables)


# --- shared helpers ----------------------------------------------------------


def _norm_text(text: str) -> str:
    return text.strip().rstrip(".").lower()


def parse_object_states(text: str) -> dict[str, str]:
    states: dict[str, str] = {}
    for m in re.finditer(r"([^(),]+)\(([^)]*)\)", text):
        states[m.group(1).strip().lower()] = m.group(2).strip().lower()
    return states


def _constraint_lines(fields: dict[str, str]) -> list[str]:
    lines: list[str] = []
    for blob in (fields.get("constraints", ""), fields.get("retrieved", "")):
        for line in blob.splitlines():
            line = re.sub(r"^\s*(?:\d+\.|-)\s*", "", line).strip()
            if line and not line.lower().startswith(("known object state", "saved ")):
                lines.append(line)
    return lines


def task_category(task: str, tables: dict) -> str:
    text = _norm_text(task)
    overrides = tables.get("categories", {})
    for token, category in overrides.items():
        if token in text:
            return category
    verb = text.split()[0] if text.split() else text
    return _VERB_CATEGORY.get(verb, verb)


def _numbered(skills: list[str]) -> str:
    return ", ".join(f'{i}: "{s}"' for i, s in enumerate(skills, start=1))


_PUT_RE = re.compile(
    r"^put\s+(?:down\s+)?(?:the\s+)?(.+?)\s+(?:into|in|onto|on)\s+(?:the\s+)?(.+)$"
)
_SIMPLE_RES = [
    ("Open the {0}", re.compile(r"^open\s+(?:the\s+)?(.+)$")),
    ("Close the {0}", re.compile(r"^close\s+(?:the\s+)?(.+)$")),
    ("Pick up the {0}", re.compile(r"^pick\s+up\s+(?:the\s+)?(.+)$")),
]


def _category_of_object(obj: str, tables: dict) -> Optional[str]:
    members_map = dict(DEFAULT_CATEGORY_MEMBERS)
    members_map.update(tables.get("category_members", {}))
    for category, members in members_map.items():
        if obj in members or obj == category:
            return category
        # "blue tape" belongs to a category listing plain "tape".
        if any(obj.endswith(f" {m}") or m.endswith(f" {obj}") for m in members):
            return category
    return None


_DEST_PATTERNS = [
    re.compile(r"^(\w+) should be put in (?:the )?(.+)$"),
    re.compile(r"user wants (\w+) in (?:the )?(.+)$"),
    re.compile(r"user prefers (\w+) in (?:the )?(.+)$"),
]


def _preferred_destination(obj: str, constraints: list[str], tables: dict) -> Optional[str]:
    obj_category = _category_of_object(obj, tables)
    for constraint in constraints:
        text = _norm_text(constraint)
        for pattern in _DEST_PATTERNS:
            m = pattern.match(text) or pattern.search(text)
            if m:
                category, dest = m.group(1).lower(), m.group(2).strip()
                if obj == category or obj_category == category:
                    return dest
    return None


_ORDER_RE = re.compile(r"open (?:the )?(.+?) (?:first|before)")
_FULL_RE = re.compile(r"^(?:the )?(.+?) is full$")
_PUT_SKILL_RE = re.compile(
    r"^(put\s+(?:down\s+)?(?:the\s+)?)(.+?)(\s+(?:into|in|onto|on)\s+(?:the\s+)?)(.+)$",
    re.IGNORECASE,
)


def _apply_plan_transforms(skills: list[str], constraints: list[str], tables: dict) -> list[str]:
    skills = list(skills)
    lowered = [_norm_text(c) for c in constraints]

    # Destination preferences ("<category> should be put in <dest>", "user wants ... in ...").
    new_skills = []
    for skill in skills:
        m = _PUT_SKILL_RE.match(skill.strip())
        if m:
            obj = m.group(2).strip().lower()
            dest = _preferred_destination(obj, constraints, tables)
            if dest and dest != m.group(4).strip().lower():
                skill = f"{m.group(1)}{m.group(2)}{m.group(3)}{dest}"
        new_skills.append(skill)
    skills = new_skills

    # Full destinations are replaced by the scenario's alternative.
    for text in lowered:
        m = _FULL_RE.match(text)
        if m:
            full = m.group(1)
            alt = tables.get("alt_destinations", {}).get(full)
            if alt:
                skills = [re.sub(re.escape(full), alt, s, flags=re.IGNORECASE) for s in skills]

    # Single-hand robots cannot manipulate conjunctions; serialize them.
    if any("one hand" in t or "one object at a time" in t for t in lowered):
        serialized: list[str] = []
        for skill in skills:
            parts = re.split(r"\s+and\s+(?:the\s+)?", skill)
            if len(parts) > 1:
                head = parts[0]
                serialized.append(head)
                m = re.match(r"^(\w+(?:\s+up|\s+down)?)\s+(?:the\s+)?", head)
                verb = m.group(1) if m else "Pick up"
                for extra in parts[1:]:
                    serialized.append(f"{verb} the {extra.strip()}")
            else:
                serialized.append(skill)
        skills = serialized

    # Same-type grouping: later items of a group follow the group's first destination.
    if any("same type" in t or "same types" in t for t in lowered):
        group_of: dict[str, str] = {}
        for group, members in tables.get("type_groups", {}).items():
            for member in members:
                group_of[member.lower()] = group
        group_dest: dict[str, str] = {}
        unified = []
        for skill in skills:
            m = _PUT_SKILL_RE.match(skill.strip())
            if m:
                obj = m.group(2).strip().lower()
                group = group_of.get(obj)
                if group:
                    if group in group_dest:
                        skill = f"{m.group(1)}{m.group(2)}{m.group(3)}{group_dest[group]}"
                    else:
                        group_dest[group] = m.group(4).strip().lower()
            unified.append(skill)
        skills = unified

    # Ordering constraints: the named container must be opened before anything else.
    for text in lowered:
        m = _ORDER_RE.search(text)
        if m:
            container = m.group(1)
            open_skill = None
            for skill in skills:
                if _norm_text(skill).startswith("open") and container in skill.lower():
                    open_skill = skill
                    break
            if open_skill is None:
                open_skill = f"Open the {container}"
            skills = [open_skill] + [s for s in skills if s != open_skill]
    return skills


def _plan_skills(fields: dict[str, str], tables: dict) -> list[str]:
    instruction = _norm_text(fields["instruction"])
    constraints = _constraint_lines(fields)
    states = parse_object_states(fields.get("object_states", ""))
    quirks = tables.get("planner_quirks", {})

    base = tables.get("base_plans", {}).get(instruction)
    if base is not None:
        return _apply_plan_transforms(list(base), constraints, tables)

    for template, pattern in _SIMPLE_RES:
        m = pattern.match(instruction)
        if m:
            return _apply_plan_transforms([template.format(m.group(1))], constraints, tables)

    m = _PUT_RE.match(instruction)
    if m:
        obj, container = m.group(1).strip(), m.group(2).strip()
        # Ambiguous bare container references resolve through constraints first.
        if len(container.split()) == 1:
            dest = _preferred_destination(obj, constraints, tables)
            if dest and container in dest:
                container = dest
        state = states.get(container)
        openable = any(w in container for w in _OPENABLE_WORDS)
        skills: list[str]
        if state == "closed":
            skills = [
                f"Open the {container}",
                f"Pick up the {obj}",
                f"Put down the {obj} into the {container}",
                f"Close the {container}",
            ]
        elif openable and state is None:
            if quirks.get("defer_open"):
                skills = [
                    f"Pick up the {obj}",
                    f"Open the {container}",
                    f"Put down the {obj} into the {container}",
                ]
            else:
                skills = [
                    f"Open the {container}",
                    f"Pick up the {obj}",
                    f"Put down the {obj} into the {container}",
                ]
        else:
            skills = [f"Pick up the {obj}", f"Put down the {obj} into the {container}"]
        return _apply_plan_transforms(skills, constraints, tables)

    raise ModelFormatError(f"no scripted planning rule matches {instruction!r}")


def _rule_plan(fields: dict[str, str], tables: dict) -> str:
    return _numbered(_plan_skills(fields, tables))


def correction_to_constraint(correction: str, plan_skills: list[str]) -> str:
    """Rewrite a high-level correction as a reusable constraint sentence."""
    text = _norm_text(correction)
    m = re.search(r"open (?:the )?(.+?) first", text)
    if m:
        container = m.group(1)
        if len(container.split()) == 1:
            for skill in plan_skills:
                found = re.search(rf"(\w+\s+{re.escape(container)})", skill.lower())
                if found:
                    container = found.group(1)
                    break
        return f"Open the {container} before the other sub-tasks."
    return correction.strip().rstrip(".") + "."


def _parse_numbered(text: str) -> list[str]:
    return [m.group(1) for m in re.finditer(r'\d+\s*:\s*"([^"]+)"', text)]


def _rule_replan(fields: dict[str, str], tables: dict) -> str:
    original = _parse_numbered(fields["original_plan"])
    completed = _parse_numbered(fields.get("completed_skills", "")) or [
        s.strip() for s in fields.get("completed_skills", "").splitlines() if s.strip()
    ]
    remaining = [s for s in original if s not in completed]
    constraint = correction_to_constraint(fields["correction"], original)
    constraints = _constraint_lines(fields) + [constraint]
    skills = _apply_plan_transforms(remaining, constraints, tables)
    if not skills:
        raise ModelFormatError("replan produced an empty skill list")
    return _numbered(skills)


# --- skill composing ---------------------------------------------------------


def _parse_kv_blob(blob: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in blob.split(";"):
        if "=" in part:
            key, _, value = part.partition("=")
            out[key.strip()] = value.strip()
    return out


def _parse_param_lines(blob: str) -> dict[str, object]:
    params: dict[str, object] = {}
    for line in blob.splitlines():
        m = re.match(r"^-\s*(\w+)\s*=\s*(.+)$", line.strip())
        if m:
            value = m.group(2).strip()
            if value.startswith("["):
                nums = re.findall(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?", value)
                params[m.group(1)] = vec3([float(n) for n in nums[:3]])
            elif value.startswith('"'):
                params[m.group(1)] = value.strip('"')
            else:
                try:
                    params[m.group(1)] = float(value)
                except ValueError:
                    params[m.group(1)] = value
    return params


def _fmt_vec(v) -> str:
    return dsl.format_value(vec3(v))


def _rule_compose(fields: dict[str, str], tables: dict) -> str:
    skill = fields["skill"]
    category, obj_label, container_label = sim.parse_skill(skill)
    info = _parse_kv_blob(fields.get("object_info", ""))
    params = _parse_param_lines(fields.get("parameters", ""))

    offset = params.get("grasp_offset", (0.0, 0.0, 0.0))
    orientation = params.get("grasp_orientation") or info.get("orientation", '"top-down"').strip('"')
    lines: list[str]
    if category in ("open", "close"):
        axis_text = info.get("axis", "[0, -1, 0]")
        nums = re.findall(r"-?\d+(?:\.\d+)?", axis_text)
        axis = vec3([float(n) for n in nums[:3]])
        travel = float(info.get("travel_max", "0.15"))
        distance = params.get("pull_distance", round(0.7 * travel, 6))
        lines = [
            f'h = detect("{obj_label}")',
            f'grasp(h, offset={_fmt_vec(offset)}, orientation="{orientation}")',
        ]
        if category == "open":
            lines.append(f"pull(h, distance={dsl.format_value(float(distance))})")
        else:
            lines.append(
                f"pull(h, direction={_fmt_vec(scale(axis, -1.0))}, "
                f"distance={dsl.format_value(float(distance))})"
            )
        lines.append("open_gripper()")
    elif category == "pick up":
        lines = [
            f'h = detect("{obj_label}")',
            f'grasp(h, offset={_fmt_vec(offset)}, orientation="{orientation}")',
            "move_by([0, 0, 0.05])",
        ]
    elif category in ("put", "hang"):
        lines = [
            f'd = detect("{container_label}")',
            "place(d)",
        ]
    else:  # pragma: no cover - parse_skill already restricts categories
        raise ModelFormatError(f"no compose template for category {category!r}")
    return "\n".join(lines)


def free_identifiers(program_text: str) -> set[str]:
    names = set(re.findall(r"\b([A-Za-z_]\w*)\b", program_text))
    return names - set(dsl.BUILTINS) - {"offset", "orientation", "direction", "distance"}


def _rule_recompose(fields: dict[str, str], tables: dict) -> str:
    program_text = fields["program"]
    program = dsl.parse(program_text, known=free_identifiers(program_text))
    adjustment = fields.get("adjustment", "none").strip()
    if adjustment.lower() in ("", "none"):
        return dsl.format_program(program)
    nums = re.findall(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?", adjustment)
    delta = vec3([float(n) for n in nums[:3]])
    statements = list(program.statements)
    for i, stmt in enumerate(statements):
        if stmt.command == "grasp":
            statements[i] = dsl.with_offset_delta(stmt, delta)
            break
    else:
        statements.insert(0, dsl.Statement("move_by", [delta], []))
    return dsl.format_program(dsl.Program(statements))


# --- correction classification ------------------------------------------------


def _rule_level(fields: dict[str, str], tables: dict) -> str:
    text = _norm_text(fields["correction"])
    if (
        any(w in text.split() or f" {w} " in f" {text} " for w in DIRECTION_WORDS)
        or any(p in text for p in _VAGUE_PHRASES)
        or _UNIT_RE.search(text)
        or text.startswith(("move", "rotate", "pull", "go "))
    ):
        return "low"
    return "high"


def _rule_dependence(fields: dict[str, str], tables: dict) -> str:
    text = _norm_text(fields["correction"])
    if "now you can" in text or "continue" in text or "as before" in text:
        return "(b)"
    if "keep going" in text or "more" in text or "again" in text:
        return "(a)"
    return "(c)"


def frame_axes(normal) -> tuple[str, tuple, tuple, tuple]:
    """Object-centric axes from an outward normal; world axes when degenerate."""
    n = vec3(normal)
    forward = scale(n, -1.0)
    up = (0.0, 0.0, 1.0)
    lateral = cross(forward, up)
    if norm(lateral) < 1e-6:
        return "absolute", (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), up
    right = normalize(lateral)
    return "object-centric", normalize(forward), right, up


def _rule_frame(fields: dict[str, str], tables: dict) -> str:
    text = _norm_text(fields["correction"])
    nums = re.findall(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?", fields["normal"])
    frame, forward, right, up = frame_axes([float(n) for n in nums[:3]])
    if "world frame" in text or "absolute" in text:
        frame, forward, right, up = "absolute", (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)
    return "\n".join(
        [
            f"frame: {frame}",
            f"forward: {_fmt_vec(forward)}",
            f"right: {_fmt_vec(right)}",
            f"up: {_fmt_vec(up)}",
        ]
    )


# --- knowledge distillation -----------------------------------------------------


def _state_lines(blob: str) -> str:
    entries = [p.strip() for p in blob.split(";") if p.strip()]
    if not entries:
        return "none"
    return "\n".join(f"- {e}" for e in entries)


def _rule_distill_skill(fields: dict[str, str], tables: dict) -> str:
    program_text = fields["final_program"]
    program = dsl.parse(program_text, known=free_identifiers(program_text))
    variables: list[str] = []
    label = None
    for stmt in program.statements:
        kw = dict(stmt.kwargs)
        if stmt.command == "detect" and label is None and isinstance(stmt.args[0], str):
            label = stmt.args[0]
        if stmt.command == "grasp":
            offset = kw.get("offset", (0.0, 0.0, 0.0))
            variables.append(f"- grasp_offset = {_fmt_vec(offset)}")
            orientation = kw.get("orientation")
            if orientation:
                variables.append(f'- grasp_orientation = "{orientation}"')
        if stmt.command == "pull" and "distance" in kw:
            variables.append(f"- pull_distance = {dsl.format_value(kw['distance'])}")
    if label:
        variables.append(f'- object_label = "{label}"')
    knowledge = "task parameters and object information for similar tasks"
    return "\n".join(
        [
            f"Task-related knowledge: {knowledge}",
            "Variables to save:",
            "\n".join(variables) if variables else "none",
            "Modified code/plan:",
            program_text,
            "Updated object state:",
            _state_lines(fields.get("state_updates", "")),
        ]
    )


def _rule_distill_plan(fields: dict[str, str], tables: dict) -> str:
    plan_skills = _parse_numbered(fields.get("final_plan", ""))
    variables: list[str] = []
    for m in re.finditer(r"correction \(high\): (.+)$", fields.get("history", ""), re.MULTILINE):
        text = m.group(1).strip()
        lowered = text.lower()
        if "robot only" in lowered or "one hand" in lowered or "one object at a time" in lowered:
            variables.append(f'- robot_constraint = "{text}"')
        elif "wants" in lowered or "prefer" in lowered:
            variables.append(f'- preference = "{text}"')
        else:
            variables.append(f'- constraint = "{correction_to_constraint(text, plan_skills)}"')
    for m in re.finditer(r"ambiguity: (.+?) -> (.+)$", fields.get("history", ""), re.MULTILINE):
        variables.append(f'- constraint = "\'{m.group(1)}\' refers to the {m.group(2)}."')
    return "\n".join(
        [
            "Task-related knowledge: constraints and preferences reusable for future planning",
            "Variables to save:",
            "\n".join(variables) if variables else "none",
            "Modified code/plan:",
            fields.get("final_plan", "") or "none",
            "Updated object state:",
            _state_lines(fields.get("state_updates", "")),
        ]
    )


# --- retrieval ------------------------------------------------------------------


def _rule_retrieve(fields: dict[str, str], tables: dict) -> str:
    previous = [t.strip() for t in re.split(r"\s*\d+\.\s*", fields["previous_tasks"]) if t.strip()]
    new_task = fields["new_task"].strip().rstrip(".")
    target = task_category(new_task, tables)
    indices = [
        i for i, task in enumerate(previous, start=1) if task_category(task, tables) == target
    ]
    if not indices:
        return '1: "No"'
    return f'1: "Yes", 2: [{", ".join(str(i) for i in indices)}]'


_HANDLERS = {
    PromptKind.PLAN: _rule_plan,
    PromptKind.REPLAN: _rule_replan,
    PromptKind.COMPOSE: _rule_compose,
    PromptKind.RECOMPOSE: _rule_recompose,
    PromptKind.LEVEL_CLASSIFY: _rule_level,
    PromptKind.DEPENDENCE_CLASSIFY: _rule_dependence,
    PromptKind.FRAME_RESOLVE: _rule_frame,
    PromptKind.DISTILL_SKILL: _rule_distill_skill,
    PromptKind.DISTILL_PLAN: _rule_distill_plan,
    PromptKind.RETRIEVE_SEMANTIC: _rule_retrieve,
}

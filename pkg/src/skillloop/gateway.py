"""Uniform language-model interface for every prompt kind.

Two backends share the same request/response contract: a deterministic
scripted backend (rule tables, no network) and a generic remote backend
(single-turn chat completion over HTTPS).  Every call is transcript-logged so
a scripted episode can be replayed byte for byte.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

import httpx


class GatewayError(Exception):
    pass


class MissingField(GatewayError):
    pass


class ModelFormatError(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class PromptKind(Enum):
    PLAN = "plan"
    REPLAN = "replan"
    COMPOSE = "compose"
    RECOMPOSE = "recompose"
    LEVEL_CLASSIFY = "level_classify"
    DEPENDENCE_CLASSIFY = "dependence_classify"
    FRAME_RESOLVE = "frame_resolve"
    DISTILL_SKILL = "distill_skill"
    DISTILL_PLAN = "distill_plan"
    RETRIEVE_SEMANTIC = "retrieve_semantic"


PLAN_CONSTRAINT_1 = (
    "The robot should manipulate one object and only move its gripper once in each sub-task."
)
PLAN_CONSTRAINT_2 = (
    "If the instruction is ambiguous, first refer to the constraints to see whether you can "
    "replace the ambiguous reference; if not just leave it as is."
)

TEMPLATES: dict[PromptKind, str] = {
    PromptKind.PLAN: (
        "Your role is to break down instructions into smaller sub-tasks.\n"
        "Constraints:\n{constraints}\n"
        "{retrieved}"
        "Object state: {object_states}\n"
        "Instruction: {instruction}\n"
        "Plan:"
    ),
    PromptKind.REPLAN: (
        "Your role is to break down instructions into smaller sub-tasks.\n"
        "Constraints:\n{constraints}\n"
        "{retrieved}"
        "Object state: {object_states}\n"
        "Instruction: {instruction}\n"
        "Original plan:\n{original_plan}\n"
        "Already completed sub-tasks:\n{completed_skills}\n"
        "Current sub-task: {current_skill}\n"
        "Correction: {correction}\n"
        "Revised plan:"
    ),
    PromptKind.COMPOSE: (
        "Write a policy program for the given sub-task using only the documented commands.\n"
        "Commands: detect(label); grasp(obj, offset=[x, y, z], orientation=\"...\"); "
        "pull(obj, direction=[x, y, z], distance=d); place(target); move_to(target); "
        "move_by([x, y, z]); rotate(angle); open_gripper(); close_gripper()\n"
        "Object information: {object_info}\n"
        "Task parameters:\n{parameters}\n"
        "Sub-task: {skill}\n"
        "Program:"
    ),
    PromptKind.RECOMPOSE: (
        "Adjust the policy program below so that it addresses the user's correction, "
        "resuming from the failed statement.\n"
        "Sub-task: {skill}\n"
        "Remaining program:\n{program}\n"
        "Relevant interaction history:\n{context}\n"
        "Correction: {correction}\n"
        "Grounded adjustment: {adjustment}\n"
        "Revised program:"
    ),
    PromptKind.LEVEL_CLASSIFY: (
        "A human issued a correction while a robot was executing a sub-task. Decide whether "
        "the correction is high-level (pertains to a constraint or preference on the plan) or "
        "low-level (adjusts a primitive parameter such as the gripper pose).\n"
        "Plan:\n{plan}\n"
        "Current sub-task: {skill}\n"
        "Correction: \"{correction}\"\n"
        "Answer with exactly one word, high or low:"
    ),
    PromptKind.DEPENDENCE_CLASSIFY: (
        "A human is issuing corrections to a robot, which encounters errors during executing "
        "a task. These corrections may depend on the robot's past experiences. Your task is to "
        "determine what does a correction depend on: (a) Last interaction. (b) Initial "
        "interaction. (c) No dependence.\n"
        "\"{correction}\":"
    ),
    PromptKind.FRAME_RESOLVE: (
        "Decide whether the reference frame of the correction is an absolute frame or an "
        "object-centric frame, and express the frame axes.\n"
        "Related object: {object_label}\n"
        "Object normal vector: {normal}\n"
        "Correction: \"{correction}\"\n"
        "Frame:"
    ),
    PromptKind.DISTILL_SKILL: (
        "Your task is to extract reusable knowledge from the provided interaction history.\n"
        "Task name: {task_name}\n"
        "Task-related knowledge:\n"
        "Interaction history: {history}\n"
        "Final program:\n{final_program}\n"
        "Resulting object states: {state_updates}\n"
        "Variables to save:\n"
        "Modified code/plan:\n"
        "Updated object state:"
    ),
    PromptKind.DISTILL_PLAN: (
        "Your task is to extract reusable knowledge from the provided interaction history.\n"
        "Task name: {task_name}\n"
        "Task-related knowledge:\n"
        "Interaction history: {history}\n"
        "Final plan:\n{final_plan}\n"
        "Resulting object states: {state_updates}\n"
        "Variables to save:\n"
        "Modified code/plan:\n"
        "Updated object state:"
    ),
    PromptKind.RETRIEVE_SEMANTIC: (
        "I'll give you a list of tasks a robot has previously performed and a new task to "
        "address. Your goal is to determine the following:\n"
        "1. Does the new task fall into the same category with any previous task? "
        "(E.g. \"open\" and \"put\" are different categories of tasks)\n"
        "2. If so, which specific previous tasks are they? Answer in list format.\n"
        "Previous tasks: {previous_tasks}\n"
        "New task: {new_task}\n"
        "Response:"
    ),
}

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


def required_fields(kind: PromptKind) -> list[str]:
    return sorted(set(_PLACEHOLDER_RE.findall(TEMPLATES[kind])))


def render(kind: PromptKind, fields: dict[str, str]) -> str:
    """Render the kind's template; every placeholder must be supplied."""
    missing = [name for name in required_fields(kind) if name not in fields]
    if missing:
        raise MissingField(f"{kind.value}: missing field(s) {', '.join(missing)}")
    return TEMPLATES[kind].format(**{k: fields[k] for k in required_fields(kind)})


def render_constraints(constraints: list[str]) -> str:
    lines = [PLAN_CONSTRAINT_1, PLAN_CONSTRAINT_2] + [
        c for c in constraints if c not in (PLAN_CONSTRAINT_1, PLAN_CONSTRAINT_2)
    ]
    return "\n".join(f"{i}. {text}" for i, text in enumerate(lines, start=1))


@dataclass
class PromptRequest:
    kind: PromptKind
    fields: dict[str, str]


@dataclass
class PromptResponse:
    raw: str
    parsed: dict


@dataclass
class TranscriptEntry:
    seq: int
    kind: str
    request: dict[str, str]
    response: str
    latency: float


# --- reply parsing -----------------------------------------------------------

_PLAN_ITEM_RE = re.compile(r'(\d+)\s*:\s*"([^"]+)"')
_DEP_MARK_RE = re.compile(r"\(([abc])\)")


def _parse_plan_reply(raw: str) -> dict:
    items = _PLAN_ITEM_RE.findall(raw)
    if not items:
        raise ModelFormatError("no numbered skill list found in plan reply")
    ordered = sorted(items, key=lambda t: int(t[0]))
    if [int(i) for i, _ in ordered] != list(range(1, len(ordered) + 1)):
        raise ModelFormatError("plan skill numbering is not 1..M")
    return {"skills": [text for _, text in ordered]}


def _parse_level_reply(raw: str) -> dict:
    token = raw.strip().strip(".").lower()
    if token in ("high", "high-level"):
        return {"level": "high"}
    if token in ("low", "low-level"):
        return {"level": "low"}
    raise ModelFormatError(f"expected 'high' or 'low', got {raw!r}")


def _parse_dependence_reply(raw: str) -> dict:
    marks = _DEP_MARK_RE.findall(raw)
    stripped = raw.strip()
    if len(marks) != 1 or len(stripped) > 4:
        raise ModelFormatError(f"ambiguous dependence reply {raw!r}")
    return {"dependence": {"a": "last", "b": "initial", "c": "none"}[marks[0]]}


_VEC_RE = re.compile(r"\[\s*(-?[\d.eE+]+)\s*,\s*(-?[\d.eE+]+)\s*,\s*(-?[\d.eE+]+)\s*\]")


def _parse_vec(text: str) -> tuple[float, float, float]:
    m = _VEC_RE.search(text)
    if not m:
        raise ModelFormatError(f"expected a 3-vector in {text!r}")
    return (float(m.group(1)), float(m.group(2)), float(m.group(3)))


def _parse_frame_reply(raw: str) -> dict:
    fields: dict[str, str] = {}
    for line in raw.splitlines():
        if ":" in line:
            key, _, value = line.partition(":")
            fields[key.strip().lower()] = value.strip()
    if "frame" not in fields:
        raise ModelFormatError("frame reply missing 'frame' line")
    frame = fields["frame"].lower()
    if frame not in ("absolute", "object-centric"):
        raise ModelFormatError(f"unknown frame {fields['frame']!r}")
    out: dict = {"frame": frame}
    for axis in ("forward", "right", "up"):
        if axis not in fields:
            raise ModelFormatError(f"frame reply missing '{axis}' line")
        out[axis] = _parse_vec(fields[axis])
    return out


_SECTION_HEADERS = (
    "Task-related knowledge:",
    "Variables to save:",
    "Modified code/plan:",
    "Updated object state:",
)


def _split_sections(raw: str) -> dict[str, str]:
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in raw.splitlines():
        matched = None
        for header in _SECTION_HEADERS:
            if line.startswith(header):
                matched = header
                break
        if matched:
            current = matched
            sections[current] = []
            remainder = line[len(matched):].strip()
            if remainder:
                sections[current].append(remainder)
        elif current is not None:
            sections[current].append(line)
    missing = [h for h in _SECTION_HEADERS if h not in sections]
    if missing:
        raise ModelFormatError(f"distillation reply missing section {missing[0]!r}")
    return {h: "\n".join(lines).strip() for h, lines in sections.items()}


_VAR_LINE_RE = re.compile(r"^-\s*(\w+)\s*=\s*(.+)$")
_STATE_LINE_RE = re.compile(r"^-\s*(.+?)\s*:\s*(.+)$")


def _parse_var_value(text: str):
    text = text.strip()
    if text.startswith("["):
        return list(_parse_vec(text))
    if text.startswith('"') and text.endswith('"'):
        return text[1:-1]
    try:
        return float(text)
    except ValueError:
        raise ModelFormatError(f"cannot parse variable value {text!r}") from None


def _parse_distill_reply(raw: str) -> dict:
    sections = _split_sections(raw)
    variables: list[tuple[str, object]] = []
    for line in sections["Variables to save:"].splitlines():
        line = line.strip()
        if not line or line.lower() == "none":
            continue
        m = _VAR_LINE_RE.match(line)
        if not m:
            raise ModelFormatError(f"bad variable line {line!r}")
        variables.append((m.group(1), _parse_var_value(m.group(2))))
    states: dict[str, str] = {}
    for line in sections["Updated object state:"].splitlines():
        line = line.strip()
        if not line or line.lower() == "none":
            continue
        m = _STATE_LINE_RE.match(line)
        if not m:
            raise ModelFormatError(f"bad object state line {line!r}")
        states[m.group(1)] = m.group(2)
    return {
        "knowledge": sections["Task-related knowledge:"],
        "variables": variables,
        "modified": sections["Modified code/plan:"],
        "object_states": states,
    }


_RETRIEVE_YES_RE = re.compile(r'1\s*:\s*"(Yes|No)"', re.IGNORECASE)
_RETRIEVE_LIST_RE = re.compile(r"2\s*:\s*\[([\d,\s]*)\]")


def _parse_retrieve_reply(raw: str) -> dict:
    m = _RETRIEVE_YES_RE.search(raw)
    if not m:
        raise ModelFormatError("retrieval reply missing 1: \"Yes\"/\"No\"")
    if m.group(1).lower() == "no":
        return {"match": False, "indices": []}
    lst = _RETRIEVE_LIST_RE.search(raw)
    if not lst:
        raise ModelFormatError("retrieval reply missing 2: [..] list")
    indices = [int(x) for x in lst.group(1).split(",") if x.strip()]
    return {"match": True, "indices": indices}


def parse_reply(kind: PromptKind, raw: str) -> dict:
    """Extract the kind's output schema from raw model text."""
    if not raw.strip():
        raise ModelFormatError("empty model reply")
    if kind in (PromptKind.PLAN, PromptKind.REPLAN):
        return _parse_plan_reply(raw)
    if kind in (PromptKind.COMPOSE, PromptKind.RECOMPOSE):
        return {"program": raw.strip()}
    if kind is PromptKind.LEVEL_CLASSIFY:
        return _parse_level_reply(raw)
    if kind is PromptKind.DEPENDENCE_CLASSIFY:
        return _parse_dependence_reply(raw)
    if kind is PromptKind.FRAME_RESOLVE:
        return _parse_frame_reply(raw)
    if kind in (PromptKind.DISTILL_SKILL, PromptKind.DISTILL_PLAN):
        return _parse_distill_reply(raw)
    if kind is PromptKind.RETRIEVE_SEMANTIC:
        return _parse_retrieve_reply(raw)
    raise GatewayError(f"no parser for kind {kind}")  # pragma: no cover


# --- backends ----------------------------------------------------------------


class Backend(Protocol):
    def complete(self, request: PromptRequest, prompt: str) -> str: ...

    @property
    def retries_on_format_error(self) -> bool: ...


class ScriptedBackend:
    """Pure rule evaluation over (request, scenario rule tables)."""

    retries_on_format_error = False

    def __init__(self, tables: Optional[dict] = None):
        self.tables = tables or {}

    def complete(self, request: PromptRequest, prompt: str) -> str:
        from . import scripted_rules

        return scripted_rules.answer(request.kind, request.fields, self.tables)


@dataclass
class RemoteConfig:
    endpoint: str
    model: str
    temperature: float = 0.0
    auth_env: str = "SKILLLOOP_API_TOKEN"
    timeout: float = 60.0


class RemoteBackend:
    """Single-turn chat completion over HTTPS at temperature 0."""

    retries_on_format_error = True

    def __init__(self, config: RemoteConfig, transport: Optional[httpx.BaseTransport] = None):
        if not config.endpoint or not config.model:
            raise GatewayError("remote backend requires endpoint and model name")
        self.config = config
        self._client = httpx.Client(transport=transport, timeout=config.timeout)

    def complete(self, request: PromptRequest, prompt: str) -> str:
        headers = {}
        token = os.environ.get(self.config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = self._client.post(self.config.endpoint, json=body, headers=headers)
            resp.raise_for_status()
            doc = resp.json()
            return doc["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"remote completion failed: {exc}") from exc


class Gateway:
    """Renders prompts, calls the backend, parses replies, logs a transcript."""

    def __init__(self, backend: Backend):
        self.backend = backend
        self.transcript: list[TranscriptEntry] = []
        self._seq = 0

    def complete(self, request: PromptRequest) -> PromptResponse:
        prompt = render(request.kind, request.fields)
        attempts = 2 if self.backend.retries_on_format_error else 1
        last_error: Optional[Exception] = None
        for _ in range(attempts):
            start = time.monotonic()
            raw = self.backend.complete(request, prompt)
            latency = time.monotonic() - start
            self._log(request, raw, latency)
            try:
                return PromptResponse(raw=raw, parsed=parse_reply(request.kind, raw))
            except ModelFormatError as exc:
                last_error = exc
        assert last_error is not None
        raise last_error

    def ask(self, kind: PromptKind, **fields: str) -> dict:
        return self.complete(PromptRequest(kind, fields)).parsed

    def _log(self, request: PromptRequest, raw: str, latency: float) -> None:
        scripted = isinstance(self.backend, ScriptedBackend)
        self.transcript.append(
            TranscriptEntry(
                seq=self._seq,
                kind=request.kind.value,
                request=dict(request.fields),
                response=raw,
                latency=0.0 if scripted else latency,
            )
        )
        self._seq += 1

    def transcript_lines(self) -> list[str]:
        return [
            json.dumps(
                {
                    "seq": e.seq,
                    "kind": e.kind,
                    "request": e.request,
                    "response": e.response,
                    "latency": round(e.latency, 6),
                },
                sort_keys=True,
            )
            for e in self.transcript
        ]

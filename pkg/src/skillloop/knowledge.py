"""Knowledge base, distiller, and retriever.

Distilled entries are keyed by task name and retrieved in two stages: a
semantic task-category filter, then a visual-feature similarity argmax over
the survivors.  Robot constraints and user preferences are global and always
retrieved.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

from .config import RetrievalConfig, DEFAULT_CONFIG
from .gateway import Gateway, PromptKind

log = logging.getLogger(__name__)

KB_HEADER = "skillloop-kb 1"

# Process-wide embedder seed; the CLI's --seed flag overrides it so scene
# features and retrieval queries stay in the same hash space.
DEFAULT_SEED = 0

# Skill parameters the composer understands; unknown names in distilled
# knowledge are dropped with a warning rather than silently misused.
PARAMETER_REGISTRY = {
    "grasp_offset": "vector",
    "grasp_orientation": "label",
    "pull_distance": "scalar",
    "place_offset": "vector",
}


class KnowledgeError(Exception):
    pass


class ZeroVector(KnowledgeError):
    pass


class NotFulfilled(KnowledgeError):
    pass


class IoError(KnowledgeError):
    pass


class CorruptFile(KnowledgeError):
    pass


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]; rejects zero vectors."""
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine is undefined for zero vectors")
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (na * nb)


class TextEmbedder:
    """Seeded token-hash projection to a fixed dimension, L2-normalized.

    A deterministic stand-in for learned text/vision encoders: equal texts map
    to equal vectors and unrelated token sets are nearly orthogonal.
    """

    def __init__(self, dim: int = DEFAULT_CONFIG.retrieval.feature_dim, seed: Optional[int] = None):
        self.dim = dim
        self.seed = DEFAULT_SEED if seed is None else seed

    def _token_vector(self, token: str) -> list[float]:
        out: list[float] = []
        counter = 0
        while len(out) < self.dim:
            digest = hashlib.sha256(f"{self.seed}:{token}:{counter}".encode()).digest()
            for i in range(0, len(digest) - 1, 2):
                raw = int.from_bytes(digest[i : i + 2], "big")
                out.append(raw / 32767.5 - 1.0)
                if len(out) == self.dim:
                    break
            counter += 1
        return out

    def embed(self, text: str) -> tuple[float, ...]:
        tokens = [t for t in text.lower().split() if t]
        if not tokens:
            raise ZeroVector("cannot embed empty text")
        acc = [0.0] * self.dim
        for token in tokens:
            for i, v in enumerate(self._token_vector(token)):
                acc[i] += v
        n = math.sqrt(sum(v * v for v in acc))
        if n == 0.0:  # pragma: no cover - hash collapse is practically impossible
            raise ZeroVector("degenerate embedding")
        return tuple(v / n for v in acc)


@dataclass
class KnowledgeEntry:
    key: str
    kind: str  # "plan" | "skill"
    constraints: list[str] = field(default_factory=list)
    preferences: list[str] = field(default_factory=list)
    robot_constraints: list[str] = field(default_factory=list)
    task_params: dict = field(default_factory=dict)
    object_info: Optional[dict] = None  # {"label": str, "feature": [float]}
    object_state_updates: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)  # {"session", "iteration", "sequence"}

    def __post_init__(self) -> None:
        if not self.key:
            raise KnowledgeError("entry key must be non-empty")
        if self.kind not in ("plan", "skill"):
            raise KnowledgeError(f"unknown entry kind {self.kind!r}")
        if self.kind == "plan" and self.task_params:
            raise KnowledgeError("plan-level entries carry no task parameters")
        if self.kind == "skill" and (self.constraints or self.preferences):
            raise KnowledgeError("skill-level entries carry no constraints")

    @property
    def composite_key(self) -> str:
        return f"{self.kind}:{self.key}"

    def feature(self) -> Optional[tuple[float, ...]]:
        if self.object_info and self.object_info.get("feature"):
            return tuple(self.object_info["feature"])
        return None


@dataclass
class GlobalKnowledge:
    robot_constraints: list[str] = field(default_factory=list)
    preferences: list[str] = field(default_factory=list)


def _round_floats(value, decimals=6):
    if isinstance(value, float):
        r = round(value, decimals)
        return 0.0 if r == 0.0 else r
    if isinstance(value, list):
        return [_round_floats(v, decimals) for v in value]
    if isinstance(value, tuple):
        return [_round_floats(v, decimals) for v in value]
    if isinstance(value, dict):
        return {k: _round_floats(v, decimals) for k, v in value.items()}
    return value


class KnowledgeBase:
    """In-memory store with a canonical, byte-stable file format.

    Concurrent readers are safe; writes are serialized by an internal lock and
    atomic at entry granularity.
    """

    def __init__(self) -> None:
        self._entries: dict[str, KnowledgeEntry] = {}
        self._lock = threading.Lock()
        self._sequence = 0
        self.put_count = 0

    def put(self, entry: KnowledgeEntry) -> KnowledgeEntry:
        with self._lock:
            self._sequence += 1
            entry.provenance = dict(entry.provenance, sequence=self._sequence)
            self._entries[entry.composite_key] = entry
            self.put_count += 1
            return entry

    def get(self, composite_key: str) -> Optional[KnowledgeEntry]:
        return self._entries.get(composite_key)

    def list(self, kind: Optional[str] = None) -> list[KnowledgeEntry]:
        entries = sorted(self._entries.values(), key=lambda e: e.provenance.get("sequence", 0))
        if kind is not None:
            entries = [e for e in entries if e.kind == kind]
        return entries

    def delete(self, composite_key: str) -> bool:
        with self._lock:
            return self._entries.pop(composite_key, None) is not None

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)

    def global_knowledge(self) -> GlobalKnowledge:
        out = GlobalKnowledge()
        for entry in self.list(kind="plan"):
            for c in entry.robot_constraints:
                if c not in out.robot_constraints:
                    out.robot_constraints.append(c)
            for p in entry.preferences:
                if p not in out.preferences:
                    out.preferences.append(p)
        return out

    # --- persistence ---------------------------------------------------------

    def _entry_lines(self) -> list[str]:
        lines = []
        for key in sorted(self._entries):
            doc = _round_floats(asdict(self._entries[key]))
            lines.append(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        return lines

    def save(self, path) -> None:
        with self._lock:
            lines = self._entry_lines()
        body = "".join(line + "\n" for line in lines)
        crc = zlib.crc32(body.encode("utf-8")) & 0xFFFFFFFF
        text = f"{KB_HEADER}\n{body}crc32 {crc:08x}\n"
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write knowledge base: {exc}") from exc

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read knowledge base: {exc}") from exc
        lines = text.splitlines()
        if not lines or lines[0] != KB_HEADER:
            raise CorruptFile("bad or missing knowledge-base header")
        if not lines[-1].startswith("crc32 "):
            raise CorruptFile("missing checksum line")
        body = "".join(line + "\n" for line in lines[1:-1])
        expected = lines[-1].split(" ", 1)[1]
        actual = f"{zlib.crc32(body.encode('utf-8')) & 0xFFFFFFFF:08x}"
        if actual != expected:
            raise CorruptFile(f"checksum mismatch: {actual} != {expected}")
        kb = cls()
        for line in lines[1:-1]:
            try:
                doc = json.loads(line)
                entry = KnowledgeEntry(**doc)
            except (ValueError, TypeError) as exc:
                raise CorruptFile(f"bad entry line: {exc}") from exc
            kb._entries[entry.composite_key] = entry
            kb._sequence = max(kb._sequence, entry.provenance.get("sequence", 0))
        return kb


# --- distillation -------------------------------------------------------------


def _filter_params(variables: list[tuple[str, object]]) -> tuple[dict, Optional[str]]:
    params: dict = {}
    label: Optional[str] = None
    for name, value in variables:
        if name == "object_label":
            label = str(value)
        elif name in PARAMETER_REGISTRY:
            params[name] = value
        elif name not in ("constraint", "preference", "robot_constraint"):
            log.warning("ignoring unknown distilled parameter %r", name)
    return params, label


class Distiller:
    """End-of-skill/plan knowledge extraction through the gateway."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def distill_skill(
        self,
        skill_text: str,
        history_text: str,
        final_program: str,
        state_updates: dict[str, str],
        object_feature: Optional[Sequence[float]],
        provenance: dict,
        fulfilled: bool = True,
    ) -> list[KnowledgeEntry]:
        if not fulfilled:
            raise NotFulfilled(f"skill {skill_text!r} is not fulfilled")
        parsed = self.gateway.ask(
            PromptKind.DISTILL_SKILL,
            task_name=skill_text,
            history=history_text or "none",
            final_program=final_program,
            state_updates="; ".join(f"{k}: {v}" for k, v in sorted(state_updates.items())),
        )
        params, label = _filter_params(parsed["variables"])
        object_info = None
        if label is not None:
            object_info = {
                "label": label,
                "feature": list(object_feature) if object_feature else [],
            }
        entry = KnowledgeEntry(
            key=skill_text,
            kind="skill",
            task_params=params,
            object_info=object_info,
            object_state_updates=dict(parsed["object_states"]),
            provenance=dict(provenance),
        )
        return [entry]

    def distill_plan(
        self,
        instruction: str,
        history_text: str,
        final_plan: str,
        state_updates: dict[str, str],
        provenance: dict,
        fulfilled: bool = True,
    ) -> list[KnowledgeEntry]:
        if not fulfilled:
            raise NotFulfilled(f"plan for {instruction!r} is not complete")
        parsed = self.gateway.ask(
            PromptKind.DISTILL_PLAN,
            task_name=instruction,
            history=history_text or "none",
            final_plan=final_plan,
            state_updates="; ".join(f"{k}: {v}" for k, v in sorted(state_updates.items())),
        )
        constraints, preferences, robot = [], [], []
        for name, value in parsed["variables"]:
            if name == "constraint":
                constraints.append(str(value))
            elif name == "preference":
                preferences.append(str(value))
            elif name == "robot_constraint":
                robot.append(str(value))
        entry = KnowledgeEntry(
            key=instruction,
            kind="plan",
            constraints=constraints,
            preferences=preferences,
            robot_constraints=robot,
            object_state_updates=dict(parsed["object_states"]),
            provenance=dict(provenance),
        )
        return [entry]


# --- retrieval ------------------------------------------------------------------


@dataclass
class RetrievalResult:
    global_knowledge: GlobalKnowledge
    specific: Optional[KnowledgeEntry]


class Retriever:
    """Two-stage retrieval: semantic category gate, then visual argmax."""

    def __init__(
        self,
        gateway: Gateway,
        config: RetrievalConfig = DEFAULT_CONFIG.retrieval,
        cross_modal: Optional[dict[str, Sequence[float]]] = None,
        embedder: Optional[TextEmbedder] = None,
    ):
        self.gateway = gateway
        self.config = config
        self.cross_modal = cross_modal or {}
        self.embedder = embedder or TextEmbedder(dim=config.feature_dim)

    def semantic_survivors(
        self, query_task: str, entries: list[KnowledgeEntry]
    ) -> list[KnowledgeEntry]:
        if not entries:
            return []
        previous = " ".join(f"{i}. {e.key}." for i, e in enumerate(entries, start=1))
        parsed = self.gateway.ask(
            PromptKind.RETRIEVE_SEMANTIC, previous_tasks=previous, new_task=query_task
        )
        if not parsed["match"]:
            return []
        return [entries[i - 1] for i in parsed["indices"] if 1 <= i <= len(entries)]

    def retrieve(
        self,
        query_task: str,
        query_object_feature: Optional[Sequence[float]],
        kb: KnowledgeBase,
        kind: str = "skill",
        use_visual: bool = True,
    ) -> RetrievalResult:
        result = RetrievalResult(kb.global_knowledge(), None)
        survivors = self.semantic_survivors(query_task, kb.list(kind=kind))
        if not survivors:
            return result
        if use_visual and query_object_feature is not None:
            best, best_sim = None, -2.0
            for entry in survivors:
                feature = entry.feature()
                if feature is None:
                    continue
                sim = cosine(query_object_feature, feature)
                if sim > best_sim:
                    best, best_sim = entry, sim
            if best is not None and best_sim >= self.config.visual_threshold:
                result.specific = best
            return result
        # No visual signal: fall back to the earliest distilled survivor.
        result.specific = min(survivors, key=lambda e: e.provenance.get("sequence", 0))
        return result

    def visual_semantic_retrieve(
        self, query_name: str, kb: KnowledgeBase, kind: str = "skill"
    ) -> Optional[KnowledgeEntry]:
        """Cross-modal lookup for queries whose name carries visual tokens."""
        if not query_name.strip():
            raise KnowledgeError("query name must be non-empty")
        prototypes = [
            self.cross_modal[token]
            for token in query_name.lower().split()
            if token in self.cross_modal
        ]
        if not prototypes:
            return None
        dim = len(prototypes[0])
        query = [sum(p[i] for p in prototypes) / len(prototypes) for i in range(dim)]
        best, best_sim = None, -2.0
        for entry in kb.list(kind=kind):
            feature = entry.feature()
            if feature is None:
                continue
            sim = cosine(query, feature)
            if sim > best_sim:
                best, best_sim = entry, sim
        if best is not None and best_sim >= self.config.visual_threshold:
            return best
        return None

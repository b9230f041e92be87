"""Session state machine, scripted user oracle, and benchmark runners.

A session executes one task: retrieve → plan → per-skill retrieve → compose →
step-wise execute → handle corrections → distill.  Every DSL statement is an
interruption point; corrections arrive only while the session is awaiting
input.  The scripted user drives sessions deterministically from scenario
ground truth, which makes benchmarks reproducible byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from . import corrections as cor
from . import dsl, sim
from .composer import Composer
from .config import DEFAULT_CONFIG, EngineConfig
from .gateway import Backend, Gateway, ScriptedBackend
from .geometry import Vec3, dot, sub
from .knowledge import Distiller, KnowledgeBase, Retriever
from .planner import Plan, Planner, render_retrieved
from .scenario import OracleCheck, ScenarioError, ScenarioSpec, TaskSpec, object_state
from .scripted_rules import frame_axes


class OrchestratorError(Exception):
    pass


class InvalidTransition(OrchestratorError):
    pass


class EmptyInput(OrchestratorError):
    pass


class MissingGroundTruth(OrchestratorError):
    pass


IDLE = "idle"
EXECUTING = "executing"
AWAITING = "awaiting_correction"
DONE = "done"

ABLATION_FLAGS = ("cap", "no_history", "no_extractor", "no_visual", "no_retrieval")


@dataclass(frozen=True)
class AblationConfig:
    cap: bool = False
    no_history: bool = False
    no_extractor: bool = False
    no_visual: bool = False
    no_retrieval: bool = False

    @classmethod
    def from_token(cls, token: str) -> "AblationConfig":
        token = token.strip().lower().replace("-", "_")
        if token in ("", "full"):
            return cls()
        if token not in ABLATION_FLAGS:
            raise OrchestratorError(f"unknown ablation {token!r}")
        return cls(**{token: True})

    @property
    def name(self) -> str:
        active = [f for f in ABLATION_FLAGS if getattr(self, f)]
        return "+".join(active) or "full"

    @property
    def knowledge_enabled(self) -> bool:
        # CaP handles corrections as new instructions and never touches the
        # knowledge base; the no-retrieval ablation only saves plans naively.
        return not (self.cap or self.no_retrieval)


_ABS_AXES = {"right": (1.0, 0.0, 0.0), "forward": (0.0, 1.0, 0.0), "up": (0.0, 0.0, 1.0)}


def _union(first: list[str], second: list[str]) -> list[str]:
    return first + [item for item in second if item not in first]


class Session:
    def __init__(
        self,
        scenario: ScenarioSpec,
        ablation: AblationConfig = AblationConfig(),
        kb: Optional[KnowledgeBase] = None,
        task_index: int = 0,
        iteration: int = 1,
        backend: Optional[Backend] = None,
        session_id: str = "s0",
        world: Optional[sim.WorldState] = None,
        naive_plans: Optional[dict] = None,
        config: EngineConfig = DEFAULT_CONFIG,
    ):
        self.scenario = scenario
        self.ablation = ablation
        self.config = config
        self.session_id = session_id
        self.iteration = iteration
        self.task: TaskSpec = scenario.tasks[task_index]
        self.kb = kb if kb is not None else KnowledgeBase()
        self.naive_plans = naive_plans if naive_plans is not None else {}
        self.world = world if world is not None else scenario.build_world(iteration)
        self.gateway = Gateway(backend or ScriptedBackend(scenario.backend_rules))
        self.planner = Planner(self.gateway)
        self.composer = Composer(self.gateway)
        self.retriever = Retriever(self.gateway, config.retrieval)
        self.distiller = Distiller(self.gateway)

        self.state = IDLE
        self.instruction: Optional[str] = None
        self.plan: Optional[Plan] = None
        self.plan_version = 0
        self.skill_index = 0
        self.skill_program: Optional[dsl.Program] = None
        self.cursor: Optional[dsl.ExecCursor] = None
        self.history = cor.InteractionHistory()
        self.corrections = 0
        self.skill_rounds: dict[str, int] = {}
        self.last_error: Optional[str] = None
        self.retrieved_text = ""
        self.events: list[dict] = []

    # --- event log -------------------------------------------------------------

    def emit(self, event_type: str, payload: dict) -> None:
        self.events.append({"seq": len(self.events), "type": event_type, "payload": payload})

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "state": self.state,
            "instruction": self.instruction,
            "plan": list(self.plan.skills) if self.plan else None,
            "skill_index": self.skill_index,
            "world": sim.world_to_dict(self.world),
            "history": self.history.lines(),
            "corrections": self.corrections,
            "last_error": self.last_error,
            "ablation": self.ablation.name,
        }

    # --- helpers ---------------------------------------------------------------

    def _require(self, state: str) -> None:
        if self.state != state:
            raise InvalidTransition(f"requires state {state!r}, session is {self.state!r}")

    def current_skill(self) -> str:
        if self.plan is None or self.skill_index >= len(self.plan.skills):
            raise OrchestratorError("no active skill")
        return self.plan.skills[self.skill_index]

    def target_record(self, skill: str) -> Optional[sim.ObjectRecord]:
        category, obj_label, container_label = sim.parse_skill(skill)
        label = container_label if category in ("put", "hang") else obj_label
        try:
            return self.world.object(sim.detect(self.world, label))
        except sim.SimError:
            return None

    def grasp_offset(self) -> Optional[Vec3]:
        """Offset of the current program's grasp statement, if any."""
        if self.skill_program is None:
            return None
        for stmt in self.skill_program.statements:
            if stmt.command == "grasp":
                return dict(stmt.kwargs).get("offset", (0.0, 0.0, 0.0))
        return None

    # --- lifecycle ---------------------------------------------------------------

    def submit_instruction(self, text: str) -> None:
        self._require(IDLE)
        self.instruction = text
        self.retrieved_text = ""
        if self.ablation.no_retrieval:
            saved = self.naive_plans.get(text)
            if saved is not None:
                self.plan = Plan(tuple(saved))
                self._start_plan(reused=True)
                return
        elif not self.ablation.cap:
            # Plan knowledge is textual, so all category survivors contribute
            # (visual disambiguation only applies to parameterized skills).
            survivors = self.retriever.semantic_survivors(text, self.kb.list(kind="plan"))
            self.retrieved_text = render_retrieved(survivors, self.kb.global_knowledge())
        states = self.scenario.states_text(self.world, self.task)
        self.plan = self.planner.plan(text, states, retrieved=self.retrieved_text)
        self._start_plan()

    def _start_plan(self, reused: bool = False) -> None:
        assert self.plan is not None
        self.plan_version += 1
        self.skill_index = 0
        self.emit(
            "plan",
            {"version": self.plan_version, "skills": list(self.plan.skills), "reused": reused},
        )
        self._begin_skill()

    def _begin_skill(self) -> None:
        assert self.plan is not None
        if self.skill_index >= len(self.plan.skills):
            self._finish_task()
            return
        skill = self.plan.skills[self.skill_index]
        if self.task.mode == "plan_only":
            self.skill_program = None
            self.cursor = None
            self.state = EXECUTING
            self.emit("state", {"state": self.state, "skill": skill})
            return
        entry = None
        if self.ablation.knowledge_enabled:
            record = self.target_record(skill)
            feature = record.feature if record is not None and record.feature else None
            result = self.retriever.retrieve(
                skill, feature, self.kb, kind="skill", use_visual=not self.ablation.no_visual
            )
            entry = result.specific
        self.skill_program = self.composer.compose(skill, self.world, entry)
        self.cursor = dsl.ExecCursor(self.skill_program, 0, {}, self.world)
        self.state = EXECUTING
        self.emit(
            "state",
            {
                "state": self.state,
                "skill": skill,
                "program": dsl.format_program(self.skill_program),
                "retrieved": entry.key if entry else None,
            },
        )

    def step(self) -> None:
        self._require(EXECUTING)
        if self.task.mode == "plan_only":
            self.emit("step", {"skill": self.current_skill(), "virtual": True})
            self.state = AWAITING
            self.emit("state", {"state": self.state, "reason": "skill_end"})
            return
        assert self.cursor is not None
        try:
            self.cursor, event = dsl.step(self.cursor, self.config.sim)
        except dsl.DslRuntimeError as exc:
            self.last_error = str(exc)
            self.state = AWAITING
            self.emit("error", {"message": self.last_error})
            return
        self.world = self.cursor.world
        self.emit("step", {"index": event.index, "statement": event.statement})
        if self.cursor.done:
            self.state = AWAITING
            self.emit("state", {"state": self.state, "reason": "skill_end"})

    def interrupt(self) -> None:
        if self.state == AWAITING:
            return  # idempotent
        self._require(EXECUTING)
        self.state = AWAITING
        self.emit("state", {"state": self.state, "reason": "interrupt"})

    def approve(self) -> None:
        self._require(AWAITING)
        self.last_error = None
        skill = self.current_skill()
        if self.task.mode == "execute" and self.ablation.knowledge_enabled:
            self._distill_skill(skill)
        self.skill_index += 1
        self._begin_skill()

    def correction(self, text: str) -> None:
        self._require(AWAITING)
        self.corrections += 1
        skill = self.current_skill()
        self.skill_rounds[skill] = self.skill_rounds.get(skill, 0) + 1
        self.emit("correction", {"text": text, "skill": skill})
        self.last_error = None
        if self.ablation.cap:
            self._cap_correction(text, skill)
            return
        assert self.plan is not None
        level = cor.classify_level(self.gateway, text, skill, self.plan.numbered())
        if level == "high":
            self.history.append(cor.HistoryEntry(skill=skill, correction=text, level="high"))
            self._replan(text, skill)
            return
        record = self.target_record(skill)
        if record is None:
            raise MissingGroundTruth(f"cannot ground correction for skill {skill!r}")
        dependence = cor.classify_dependence(self.gateway, text)
        if self.ablation.no_extractor:
            context = list(self.history.entries)
        else:
            context = cor.extract_context(self.history, dependence, skill)
        grounded = cor.ground(
            self.gateway, text, record.label, record.normal, record.extents,
            context, self.config.grounding,
        )
        self.history.append(
            cor.HistoryEntry(
                skill=skill, correction=text, level="low",
                adjustment=grounded.vector, magnitude=grounded.magnitude,
            )
        )
        self._revise_program(skill, text, grounded.vector, context)

    # --- correction internals ----------------------------------------------------

    def _replan(self, correction: str, skill: str) -> None:
        assert self.plan is not None and self.instruction is not None
        completed = list(self.plan.skills[: self.skill_index])
        states = self.scenario.states_text(self.world, self.task)
        self.plan = self.planner.replan(
            self.instruction,
            original=self.plan,
            completed=completed,
            current_skill=skill,
            correction=correction,
            object_states=states,
            retrieved=self.retrieved_text,
        )
        self.emit("solution", {"kind": "replan", "skills": list(self.plan.skills)})
        self._start_plan()

    def _revise_program(
        self, skill: str, text: str, adjustment: Vec3, context: list[cor.HistoryEntry]
    ) -> None:
        assert self.skill_program is not None
        context_lines = "\n".join(
            f"correction ({e.level}): {e.correction}" for e in context
        )
        revised = self.composer.recompose(
            skill, self.skill_program, context_lines, text, dsl.format_value(adjustment)
        )
        self.skill_program = revised
        self.cursor = dsl.ExecCursor(revised, 0, {}, self.world)
        self.state = EXECUTING
        self.emit(
            "solution",
            {"kind": "recompose", "program": dsl.format_program(revised),
             "adjustment": list(adjustment)},
        )

    def _cap_correction(self, text: str, skill: str) -> None:
        """Baseline handling: the correction is a brand-new instruction.

        No history, no grounding against object extents: direction words get a
        fixed world-frame nudge and everything else is a retry or a replan.
        """
        word = cor.direction_word(text)
        if word is not None and self.task.mode == "execute":
            axis_name, sign = cor._DIRECTION_WORDS[word]
            step = self.config.cap.default_step
            delta = tuple(sign * step * a for a in _ABS_AXES[axis_name])
            self._revise_program(skill, text, delta, [])
            return
        if cor.is_repeat(text) and self.task.mode == "execute":
            # Without history the phrase cannot be grounded; retry unchanged.
            assert self.skill_program is not None
            self.cursor = dsl.ExecCursor(self.skill_program, 0, {}, self.world)
            self.state = EXECUTING
            self.emit("solution", {"kind": "retry"})
            return
        self._replan(text, skill)

    # --- distillation ---------------------------------------------------------------

    def _provenance(self) -> dict:
        return {"session": self.session_id, "iteration": self.iteration}

    def _distill_skill(self, skill: str) -> None:
        if self.skill_program is None:
            return
        record = self.target_record(skill)
        state_updates = {}
        if record is not None:
            state_updates[record.label] = object_state(self.world, record)
        entries = self.distiller.distill_skill(
            skill_text=skill,
            history_text="\n".join(self.history.lines()),
            final_program=dsl.format_program(self.skill_program),
            state_updates=state_updates,
            object_feature=record.feature if record is not None and record.feature else None,
            provenance=self._provenance(),
        )
        for entry in entries:
            self.kb.put(entry)
            self.emit("distilled", {"key": entry.composite_key})

    def _finish_task(self) -> None:
        assert self.plan is not None and self.instruction is not None
        if self.ablation.knowledge_enabled:
            entries = self.distiller.distill_plan(
                instruction=self.instruction,
                history_text="\n".join(self.history.lines()),
                final_plan=self.plan.numbered(),
                state_updates={},
                provenance=self._provenance(),
            )
            for entry in entries:
                # A later correction-free episode must not erase knowledge the
                # task distilled earlier, so plan entries merge with their
                # previous version.
                existing = self.kb.get(entry.composite_key)
                if existing is not None:
                    entry.constraints = _union(existing.constraints, entry.constraints)
                    entry.preferences = _union(existing.preferences, entry.preferences)
                    entry.robot_constraints = _union(
                        existing.robot_constraints, entry.robot_constraints
                    )
                self.kb.put(entry)
                self.emit("distilled", {"key": entry.composite_key})
        if self.ablation.no_retrieval:
            self.naive_plans[self.instruction] = list(self.plan.skills)
        self.state = DONE
        self.emit("done", {"corrections": self.corrections})


# --- scripted user oracle --------------------------------------------------------


@dataclass
class _SkillFeedback:
    word: str
    error: float


class ScriptedUser:
    """Deterministic oracle: checks plans against declared constraints and
    nudges missed grasps toward the scenario's ground-truth grasp point."""

    def __init__(self, task: TaskSpec, config: EngineConfig = DEFAULT_CONFIG):
        self.task = task
        self.config = config
        self.emitted: set[str] = set()
        self.checked_version = 0
        self.feedback: dict[str, _SkillFeedback] = {}

    def act(self, session: Session) -> tuple[str, Optional[str]]:
        """Return the next action: ("step"|"approve"|"correct", text)."""
        if session.state == EXECUTING:
            if session.plan_version > self.checked_version:
                self.checked_version = session.plan_version
                text = self._plan_violation(session)
                if text is not None:
                    return ("correct", text)
            return ("step", None)
        if session.state == AWAITING:
            text = self._plan_violation(session)
            if text is not None:
                return ("correct", text)
            if self.task.mode == "plan_only":
                return ("approve", None)
            skill = session.current_skill()
            if sim.skill_success(session.world, skill, self.config.sim):
                self.feedback.pop(skill, None)
                return ("approve", None)
            return ("correct", self._skill_correction(session, skill))
        raise InvalidTransition(f"scripted user cannot act in state {session.state!r}")

    # Plan checks fire at most once per episode, mirroring the protocol of a
    # patient oracle who states each constraint a single time.
    def _plan_violation(self, session: Session) -> Optional[str]:
        if session.plan is None:
            return None
        for check in self.task.checks:
            if check.correction in self.emitted:
                continue
            if _violates(check, session.plan.skills):
                self.emitted.add(check.correction)
                return check.correction
        return None

    def _skill_correction(self, session: Session, skill: str) -> str:
        record = session.target_record(skill)
        if record is None:
            raise MissingGroundTruth(f"no ground truth object for skill {skill!r}")
        offset = session.grasp_offset()
        if offset is not None:
            attempt = tuple(p + o for p, o in zip(record.pose.position, offset))
        else:
            attempt = session.world.gripper.pose.position
        displacement = sub(record.grasp_point_world(), attempt)
        _, forward, right, up = frame_axes(record.normal)
        components = {
            "right": dot(displacement, right),
            "forward": dot(displacement, forward),
            "up": dot(displacement, up),
        }
        axis = max(components, key=lambda k: abs(components[k]))
        value = components[axis]
        if abs(value) <= self.config.sim.grasp_tolerance:
            raise MissingGroundTruth(
                f"skill {skill!r} unfulfilled but grasp error {value:.4f} is in tolerance"
            )
        word = {
            ("right", True): "right",
            ("right", False): "left",
            ("forward", True): "forward",
            ("forward", False): "back",
            ("up", True): "up",
            ("up", False): "down",
        }[(axis, value > 0)]
        previous = self.feedback.get(skill)
        self.feedback[skill] = _SkillFeedback(word=word, error=abs(value))
        if previous is not None and previous.word == word and abs(value) < previous.error - 1e-9:
            return "a bit more"
        return f"move {word} a little bit"


def _put_target(skill: str) -> Optional[tuple[str, str]]:
    try:
        category, obj, container = sim.parse_skill(skill)
    except sim.UnknownSkillCategory:
        return None
    if category in ("put", "hang") and container:
        return obj.lower(), container.lower()
    return None


def _violates(check: OracleCheck, skills: Sequence[str]) -> bool:
    lowered = [s.lower() for s in skills]
    if check.kind == "forbid_conjunction":
        return any(" and " in s for s in lowered)
    if check.kind == "require_order":
        subject = check.subject.lower()
        return not (lowered and subject in lowered[0])
    puts = [t for t in (_put_target(s) for s in skills) if t is not None]
    if check.kind == "require_destination":
        wanted = {o.lower() for o in check.objects}
        subject = check.subject.lower()
        return any(obj in wanted and container != subject for obj, container in puts)
    if check.kind == "forbid_destination":
        subject = check.subject.lower()
        return any(container == subject for _, container in puts)
    if check.kind == "require_same_destination":
        wanted = {o.lower() for o in check.objects}
        destinations = {container for obj, container in puts if obj in wanted}
        return len(destinations) > 1
    raise ScenarioError(f"unknown oracle check kind {check.kind!r}")


# --- episode and benchmark runners ----------------------------------------------


@dataclass(frozen=True)
class TaskResult:
    instruction: str
    corrections: int
    success: bool
    skills: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "corrections": self.corrections,
            "success": self.success,
            "skills": list(self.skills),
        }


@dataclass(frozen=True)
class EpisodeReport:
    scenario_id: str
    iteration: int
    ablation: str
    tasks: tuple[TaskResult, ...]

    @property
    def corrections(self) -> int:
        return sum(t.corrections for t in self.tasks)

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "iteration": self.iteration,
            "ablation": self.ablation,
            "corrections": self.corrections,
            "tasks": [t.to_dict() for t in self.tasks],
        }


def run_session(session: Session, user: ScriptedUser, max_actions: int = 2000) -> None:
    """Drive a session with the scripted user until it finishes."""
    for _ in range(max_actions):
        if session.state == DONE:
            return
        action, text = user.act(session)
        if action == "step":
            session.step()
        elif action == "approve":
            session.approve()
        else:
            assert text is not None
            session.interrupt()
            session.correction(text)
    raise OrchestratorError(
        f"session for {session.scenario.id!r} did not converge in {max_actions} actions"
    )


def run_episode(
    scenario: ScenarioSpec,
    iteration: int,
    ablation: AblationConfig = AblationConfig(),
    kb: Optional[KnowledgeBase] = None,
    naive_plans: Optional[dict] = None,
    config: EngineConfig = DEFAULT_CONFIG,
    backend_factory=None,
) -> EpisodeReport:
    """Run every task of the scenario once at the given iteration."""
    kb = kb if kb is not None else KnowledgeBase()
    naive_plans = naive_plans if naive_plans is not None else {}
    world = scenario.build_world(iteration)
    results = []
    for task_index, task in enumerate(scenario.tasks):
        session = Session(
            scenario,
            ablation=ablation,
            kb=kb,
            task_index=task_index,
            iteration=iteration,
            backend=backend_factory(scenario) if backend_factory else None,
            session_id=f"{scenario.id}:{iteration}:{task_index}",
            world=world,
            naive_plans=naive_plans,
            config=config,
        )
        user = ScriptedUser(task, config)
        session.submit_instruction(task.instruction)
        run_session(session, user)
        world = session.world  # state carries across tasks within an episode
        # The oracle approves a skill only once fulfilled, so reaching DONE
        # means every sub-task was verified.
        success = session.state == DONE
        results.append(
            TaskResult(
                instruction=task.instruction,
                corrections=session.corrections,
                success=success,
                skills=tuple(session.plan.skills) if session.plan else (),
            )
        )
    return EpisodeReport(
        scenario_id=scenario.id,
        iteration=iteration,
        ablation=ablation.name,
        tasks=tuple(results),
    )


def amortized(corrections: Sequence[int]) -> Fraction:
    """Mean corrections per task, kept exact."""
    if not corrections:
        raise EmptyInput("amortized corrections need at least one task")
    return Fraction(sum(corrections), len(corrections))


@dataclass
class BenchmarkReport:
    iterations: int
    ablations: tuple[str, ...]
    episodes: tuple[EpisodeReport, ...]

    def episodes_for(self, ablation: str, iteration: Optional[int] = None) -> list[EpisodeReport]:
        return [
            e
            for e in self.episodes
            if e.ablation == ablation and (iteration is None or e.iteration == iteration)
        ]

    def mean_corrections(self, ablation: str, iteration: int) -> Fraction:
        episodes = self.episodes_for(ablation, iteration)
        return amortized([e.corrections for e in episodes])

    def amortized_for(self, ablation: str) -> Fraction:
        values = [
            task.corrections for e in self.episodes_for(ablation) for task in e.tasks
        ]
        return amortized(values)

    def to_dict(self) -> dict:
        means = {
            ablation: {
                str(iteration): _fraction_dict(self.mean_corrections(ablation, iteration))
                for iteration in range(1, self.iterations + 1)
            }
            for ablation in self.ablations
        }
        return {
            "iterations": self.iterations,
            "ablations": list(self.ablations),
            "episodes": [e.to_dict() for e in self.episodes],
            "mean_corrections": means,
            "amortized": {
                ablation: _fraction_dict(self.amortized_for(ablation))
                for ablation in self.ablations
            },
        }


def _fraction_dict(value: Fraction) -> dict:
    return {
        "num": value.numerator,
        "den": value.denominator,
        "value": round(float(value), 6),
    }


def run_benchmark(
    scenarios: Sequence[ScenarioSpec],
    ablations: Sequence[AblationConfig] = (AblationConfig(),),
    iterations: int = 3,
    config: EngineConfig = DEFAULT_CONFIG,
    backend_factory=None,
) -> BenchmarkReport:
    if not scenarios:
        raise EmptyInput("benchmark suite is empty")
    if iterations < 1:
        raise OrchestratorError("iterations must be >= 1")
    episodes: list[EpisodeReport] = []
    for ablation in ablations:
        for scenario in scenarios:
            kb = KnowledgeBase()
            naive_plans: dict = {}
            for iteration in range(1, iterations + 1):
                if ablation.no_history:
                    kb = KnowledgeBase()
                    naive_plans = {}
                episodes.append(
                    run_episode(
                        scenario, iteration, ablation, kb, naive_plans, config,
                        backend_factory=backend_factory,
                    )
                )
            if ablation.cap and kb.put_count != 0:
                raise OrchestratorError("cap ablation wrote to the knowledge base")
    return BenchmarkReport(
        iterations=iterations,
        ablations=tuple(a.name for a in ablations),
        episodes=tuple(episodes),
    )

"""Skill-policy DSL: grammar, parser, canonical formatter, step interpreter.

Grammar (EBNF, also documented in docs/dsl.md)::

    program = (comment | stmt)*
    stmt    = [IDENT "="] IDENT "(" [arg ("," arg)*] ")"
    arg     = value | IDENT "=" value
    value   = NUMBER | STRING | vector | IDENT
    vector  = "[" NUMBER "," NUMBER "," NUMBER "]"

Statements are separated by newlines; comments run from "#" to end of line.
Every statement is one interruption point for the execution loop.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from . import sim
from .geometry import Vec3, vec3


class ParseError(Exception):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message


class UnknownCommand(ParseError):
    pass


class ArityError(ParseError):
    pass


class UnboundIdentifier(ParseError):
    pass


class DslRuntimeError(Exception):
    """Wraps a simulator error with the source span of the offending statement."""

    def __init__(self, span: "Span", cause: Exception):
        super().__init__(f"{span.line}:{span.col}: {cause}")
        self.span = span
        self.cause = cause


@dataclass(frozen=True)
class Span:
    line: int
    col: int


@dataclass(frozen=True)
class Identifier:
    name: str


Value = Union[float, str, Vec3, Identifier]


@dataclass
class Statement:
    command: str
    args: list[Value]
    kwargs: list[tuple[str, Value]]
    binding: Optional[str] = None
    span: Span = field(default_factory=lambda: Span(1, 1))


@dataclass
class Program:
    statements: list[Statement]


# command -> (positional kinds, allowed keyword args, binds result)
# kinds: "num", "str", "vec", "ident", "target" (ident or vec)
BUILTINS: dict[str, tuple[list[str], dict[str, str], bool]] = {
    "detect": (["str"], {}, True),
    "move_to": (["target"], {}, False),
    "move_by": (["vec"], {}, False),
    "rotate": (["num"], {}, False),
    "open_gripper": ([], {}, False),
    "close_gripper": ([], {}, False),
    "grasp": (["ident"], {"offset": "vec", "orientation": "str"}, False),
    "pull": (["ident"], {"direction": "vec", "distance": "num"}, False),
    "place": (["target"], {}, False),
}


# --- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[=(),\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(line, col, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup or ""
        value = m.group()
        if kind == "newline":
            tokens.append(_Token("newline", value, line, col))
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(_Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


# --- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None, what: str = "") -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            wanted = what or (text or kind)
            raise ParseError(tok.line, tok.col, f"expected {wanted}")
        return self.next()

    def skip_newlines(self) -> None:
        while self.peek().kind == "newline":
            self.next()

    def parse_program(self) -> Program:
        statements: list[Statement] = []
        self.skip_newlines()
        while self.peek().kind != "eof":
            statements.append(self.parse_statement())
            tok = self.peek()
            if tok.kind not in ("newline", "eof"):
                raise ParseError(tok.line, tok.col, "expected end of statement")
            self.skip_newlines()
        return Program(statements)

    def parse_statement(self) -> Statement:
        first = self.expect("ident", what="command or binding")
        binding: Optional[str] = None
        if self.peek().kind == "sym" and self.peek().text == "=":
            self.next()
            binding = first.text
            command_tok = self.expect("ident", what="command")
        else:
            command_tok = first
        self.expect("sym", "(")
        args: list[Value] = []
        kwargs: list[tuple[str, Value]] = []
        if not (self.peek().kind == "sym" and self.peek().text == ")"):
            while True:
                args_or_kw = self.parse_argument(allow_keyword=True)
                if isinstance(args_or_kw, tuple) and len(args_or_kw) == 2 and isinstance(
                    args_or_kw[0], str
                ) and args_or_kw[0].startswith("kw:"):
                    kwargs.append((args_or_kw[0][3:], args_or_kw[1]))
                else:
                    if kwargs:
                        tok = self.peek()
                        raise ParseError(
                            tok.line, tok.col, "positional argument after keyword argument"
                        )
                    args.append(args_or_kw)  # type: ignore[arg-type]
                tok = self.peek()
                if tok.kind == "sym" and tok.text == ",":
                    self.next()
                    continue
                break
        self.expect("sym", ")", what="argument or ')'")
        return Statement(
            command=command_tok.text,
            args=args,
            kwargs=kwargs,
            binding=binding,
            span=Span(command_tok.line, command_tok.col),
        )

    def parse_argument(self, allow_keyword: bool):
        tok = self.peek()
        if tok.kind == "ident":
            nxt = self.tokens[self.i + 1]
            if allow_keyword and nxt.kind == "sym" and nxt.text == "=":
                self.next()
                self.next()
                return (f"kw:{tok.text}", self.parse_value())
        return self.parse_value()

    def parse_value(self) -> Value:
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            return float(tok.text)
        if tok.kind == "string":
            self.next()
            return tok.text[1:-1].replace('\\"', '"').replace("\\\\", "\\")
        if tok.kind == "ident":
            self.next()
            return Identifier(tok.text)
        if tok.kind == "sym" and tok.text == "[":
            self.next()
            components: list[float] = []
            for n in range(3):
                num = self.expect("number", what="number")
                components.append(float(num.text))
                if n < 2:
                    self.expect("sym", ",", what="','")
            self.expect("sym", "]", what="']'")
            return vec3(components)
        raise ParseError(tok.line, tok.col, "expected argument or ')'")


def _value_kind(v: Value) -> str:
    if isinstance(v, Identifier):
        return "ident"
    if isinstance(v, tuple):
        return "vec"
    if isinstance(v, str):
        return "str"
    return "num"


def _kind_ok(expected: str, actual: str) -> bool:
    if expected == "target":
        return actual in ("ident", "vec")
    return expected == actual


def validate(program: Program) -> None:
    """Check commands, arity/kinds, and identifier binding order."""
    bound: set[str] = set()
    for stmt in program.statements:
        spec = BUILTINS.get(stmt.command)
        if spec is None:
            raise UnknownCommand(stmt.span.line, stmt.span.col, f"unknown command {stmt.command!r}")
        positional, keywords, binds = spec
        if len(stmt.args) != len(positional):
            raise ArityError(
                stmt.span.line,
                stmt.span.col,
                f"{stmt.command} takes {len(positional)} positional argument(s), got {len(stmt.args)}",
            )
        for expected, actual in zip(positional, stmt.args):
            if not _kind_ok(expected, _value_kind(actual)):
                raise ArityError(
                    stmt.span.line,
                    stmt.span.col,
                    f"{stmt.command}: expected {expected} argument, got {_value_kind(actual)}",
                )
        seen: set[str] = set()
        for name, value in stmt.kwargs:
            if name not in keywords:
                raise ArityError(
                    stmt.span.line, stmt.span.col, f"{stmt.command}: unknown keyword {name!r}"
                )
            if name in seen:
                raise ArityError(
                    stmt.span.line, stmt.span.col, f"{stmt.command}: duplicate keyword {name!r}"
                )
            seen.add(name)
            if not _kind_ok(keywords[name], _value_kind(value)):
                raise ArityError(
                    stmt.span.line,
                    stmt.span.col,
                    f"{stmt.command}: keyword {name!r} expects {keywords[name]}",
                )
        for value in list(stmt.args) + [v for _, v in stmt.kwargs]:
            if isinstance(value, Identifier) and value.name not in bound:
                raise UnboundIdentifier(
                    stmt.span.line, stmt.span.col, f"unbound identifier {value.name!r}"
                )
        if stmt.binding is not None:
            if not binds:
                raise ArityError(
                    stmt.span.line, stmt.span.col, f"{stmt.command} produces no value to bind"
                )
            bound.add(stmt.binding)


def parse(text: str, known: Optional[set[str]] = None) -> Program:
    """Parse and validate a program.

    ``known`` names count as already bound (used when recomposing a program
    suffix whose bindings live in an existing execution environment).
    """
    program = _Parser(_tokenize(text)).parse_program()
    if known:
        # Prepend phantom bindings by validating with a seeded bound set.
        _validate_with_seed(program, set(known))
    else:
        validate(program)
    return program


def _validate_with_seed(program: Program, bound: set[str]) -> None:
    probe = Program(
        [
            Statement("detect", ["seed"], [], binding=name, span=Span(0, 0))
            for name in sorted(bound)
        ]
        + program.statements
    )
    validate(probe)


# --- canonical formatter ------------------------------------------------------


def _format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_value(v: Value) -> str:
    if isinstance(v, Identifier):
        return v.name
    if isinstance(v, tuple):
        return "[" + ", ".join(_format_number(c) for c in v) + "]"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return _format_number(v)


def format_statement(stmt: Statement) -> str:
    parts = [format_value(a) for a in stmt.args]
    parts += [f"{k}={format_value(v)}" for k, v in stmt.kwargs]
    call = f"{stmt.command}({', '.join(parts)})"
    return f"{stmt.binding} = {call}" if stmt.binding else call


def format_program(program: Program) -> str:
    """Canonical text: one statement per line, named args in source order."""
    return "\n".join(format_statement(s) for s in program.statements)


def structurally_equal(a: Program, b: Program) -> bool:
    def strip(p: Program) -> list:
        return [(s.binding, s.command, s.args, s.kwargs) for s in p.statements]

    return strip(a) == strip(b)


# --- interpreter ---------------------------------------------------------------


@dataclass
class ExecCursor:
    program: Program
    index: int
    env: dict[str, Value]
    world: sim.WorldState

    @property
    def done(self) -> bool:
        return self.index >= len(self.program.statements)


@dataclass
class StepEvent:
    index: int
    span: Span
    statement: str
    events: list[sim.Event]


def _kwargs_map(stmt: Statement) -> dict[str, Value]:
    return dict(stmt.kwargs)


def _resolve(env: dict[str, Value], v: Value) -> Value:
    if isinstance(v, Identifier):
        return env[v.name]
    return v


def _object_for(world: sim.WorldState, env: dict[str, Value], v: Value) -> sim.ObjectRecord:
    resolved = _resolve(env, v)
    if not isinstance(resolved, str):
        raise sim.SimError(f"expected an object id, got {resolved!r}")
    return world.object(resolved)


def grasp_target(obj: sim.ObjectRecord, offset: Vec3, orientation: Optional[str]) -> sim.Pose:
    return sim.Pose(
        position=(
            obj.pose.position[0] + offset[0],
            obj.pose.position[1] + offset[1],
            obj.pose.position[2] + offset[2],
        ),
        approach=orientation or obj.grasp_orientation,
    )


def step(cursor: ExecCursor, cfg=None) -> tuple[ExecCursor, StepEvent]:
    """Execute exactly one statement against the world.

    Raises :class:`DslRuntimeError` on simulator failures; the cursor is left
    untouched so correction handling can resume from the same statement.
    """
    from .config import DEFAULT_CONFIG

    sim_cfg = cfg or DEFAULT_CONFIG.sim
    if cursor.done:
        raise IndexError("cursor already past end of program")
    stmt = cursor.program.statements[cursor.index]
    env = dict(cursor.env)
    world = cursor.world
    events: list[sim.Event] = []

    def run(primitive: sim.Primitive) -> None:
        nonlocal world
        try:
            world, event = sim.apply(world, primitive, sim_cfg)
        except sim.SimError as exc:
            raise DslRuntimeError(stmt.span, exc) from exc
        events.append(event)

    kw = _kwargs_map(stmt)
    cmd = stmt.command
    if cmd == "detect":
        label = _resolve(env, stmt.args[0])
        try:
            object_id = sim.detect(world, str(label))
        except sim.SimError as exc:
            raise DslRuntimeError(stmt.span, exc) from exc
        if stmt.binding:
            env[stmt.binding] = object_id
        events.append(sim.Event("detected", {"object": object_id, "label": label}))
    elif cmd == "move_to":
        target = _resolve(env, stmt.args[0])
        if isinstance(target, str):
            pos = world.object(target).pose.position
        else:
            pos = vec3(target)  # type: ignore[arg-type]
        pose = world.gripper.pose
        run(sim.MoveTo(sim.Pose(pos, pose.approach, pose.roll)))
    elif cmd == "move_by":
        run(sim.MoveBy(vec3(_resolve(env, stmt.args[0]))))  # type: ignore[arg-type]
    elif cmd == "rotate":
        pose = world.gripper.pose
        run(sim.MoveTo(sim.Pose(pose.position, pose.approach, float(_resolve(env, stmt.args[0])))))  # type: ignore[arg-type]
    elif cmd == "open_gripper":
        run(sim.SetAperture("open"))
    elif cmd == "close_gripper":
        run(sim.SetAperture("closed"))
    elif cmd == "grasp":
        obj = _object_for(world, env, stmt.args[0])
        offset = vec3(kw.get("offset", (0.0, 0.0, 0.0)))  # type: ignore[arg-type]
        orientation = kw.get("orientation")
        run(sim.MoveTo(grasp_target(obj, offset, orientation)))  # type: ignore[arg-type]
        run(sim.SetAperture("closed"))
    elif cmd == "pull":
        obj = _object_for(world, env, stmt.args[0])
        direction = kw.get("direction")
        if direction is None:
            if obj.articulation is None:
                raise DslRuntimeError(stmt.span, sim.InvalidPull(f"{obj.id!r} is not articulated"))
            direction = obj.articulation.axis
        distance = float(kw.get("distance", 0.1))  # type: ignore[arg-type]
        run(sim.Pull(obj.id, vec3(direction), distance))  # type: ignore[arg-type]
    elif cmd == "place":
        held = world.gripper.holding
        if held is None:
            raise DslRuntimeError(stmt.span, sim.SimError("nothing held to place"))
        target = _resolve(env, stmt.args[0])
        run(sim.PlaceAt(held, target if isinstance(target, str) else vec3(target)))  # type: ignore[arg-type]
    else:  # pragma: no cover - validate() rejects unknown commands
        raise DslRuntimeError(stmt.span, sim.SimError(f"unknown command {cmd!r}"))

    new_cursor = ExecCursor(cursor.program, cursor.index + 1, env, world)
    return new_cursor, StepEvent(cursor.index, stmt.span, format_statement(stmt), events)


def with_offset_delta(stmt: Statement, delta: Vec3) -> Statement:
    """Return a grasp statement with its offset shifted by ``delta``."""
    kw = dict(stmt.kwargs)
    base = vec3(kw.get("offset", (0.0, 0.0, 0.0)))  # type: ignore[arg-type]
    new_offset = (base[0] + delta[0], base[1] + delta[1], base[2] + delta[2])
    new_kwargs: list[tuple[str, Value]] = []
    replaced = False
    for name, value in stmt.kwargs:
        if name == "offset":
            new_kwargs.append((name, new_offset))
            replaced = True
        else:
            new_kwargs.append((name, value))
    if not replaced:
        new_kwargs.insert(0, ("offset", new_offset))
    return replace(stmt, kwargs=new_kwargs)

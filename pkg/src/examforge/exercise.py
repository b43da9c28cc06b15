"""Exercise definitions: loading, validation, template rendering, and
workspace-backed instantiation of parameterized variables."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from . import expr
from .client import BackendEvalError, WorkspaceConnection
from .expr import Expr, ExprSyntaxError, ImageValue, round_half_away

CHOICE_KINDS = ("multipleChoice", "dropDown")
FILL_KINDS = ("numericFill", "formulaFill")


class ExerciseLoadError(Exception):
    """Structural failure while loading a definition; carries a JSON-ish path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class TemplateError(Exception):
    pass


class InstantiationError(Exception):
    pass


@dataclass(frozen=True)
class ToleranceSpec:
    decimals: int = 4
    corridor: float = 0.0


def corridor_accepts(submitted: float, correct: float, tol: ToleranceSpec) -> bool:
    """Inclusive symmetric corridor check, done in integer units of 10^-decimals
    so the boundaries are exact."""
    scale = 10 ** tol.decimals
    a = round(round_half_away(submitted, tol.decimals) * scale)
    b = round(round_half_away(correct, tol.decimals) * scale)
    width = round(tol.corridor * scale)
    return abs(a - b) <= width


@dataclass(frozen=True)
class VariableSpec:
    name: str
    code: str
    kind: str  # number | integer | string | vector | image


@dataclass(frozen=True)
class InputElement:
    id: str
    kind: str
    options: tuple[str, ...] = ()
    carry_forward_as: str | None = None


@dataclass(frozen=True)
class FeedbackRule:
    id: str
    condition_text: str
    condition: Expr
    message: str | None
    score: int
    advance: bool  # False keeps the student on the stage for a redo (formative)


@dataclass(frozen=True)
class Transition:
    condition_text: str
    condition: Expr
    target: str


@dataclass(frozen=True)
class Stage:
    id: str
    task: str
    inputs: tuple[InputElement, ...]
    hints: tuple[str, ...] = ()
    rules: tuple[FeedbackRule, ...] = ()
    solution: str | None = None
    transitions: tuple[Transition, ...] = ()
    next: str | None = None
    fallback: str | None = None
    terminal: bool = False
    repeatable: bool = True
    skippable: bool = False
    weight: float = 1.0
    tolerance: ToleranceSpec = ToleranceSpec()

    def carry_names(self) -> list[str]:
        return [e.carry_forward_as for e in self.inputs if e.carry_forward_as]


@dataclass(frozen=True)
class ExerciseDefinition:
    id: str
    title: str
    variables: tuple[VariableSpec, ...]
    stages: dict[str, Stage]
    entry: str
    terminal_ids: frozenset[str]
    modes: tuple[str, ...] = ("formative", "summative", "exam")


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # 'error' | 'warning'
    path: str
    message: str


_schema_cache: dict | None = None


def exercise_schema() -> dict:
    global _schema_cache
    if _schema_cache is None:
        text = resources.files("examforge.schemas").joinpath("exercise.schema.json").read_text()
        _schema_cache = json.loads(text)
    return _schema_cache


def _parse_expr_at(text: str, path: str) -> Expr:
    try:
        return expr.parse(text)
    except ExprSyntaxError as exc:
        raise ExerciseLoadError(path, f"bad expression: {exc}") from exc


def load_exercise(document: bytes | str) -> ExerciseDefinition:
    """Parse and structurally check an exercise file (schema, expression
    syntax, duplicate ids, dangling stage references)."""
    import jsonschema

    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ExerciseLoadError("/", f"not valid JSON: {exc}") from exc

    validator = jsonschema.Draft202012Validator(exercise_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        path = "/" + "/".join(str(p) for p in first.absolute_path)
        raise ExerciseLoadError(path or "/", first.message)

    seen_vars: set[str] = set()
    variables: list[VariableSpec] = []
    for i, v in enumerate(data.get("variables", [])):
        if v["name"] in seen_vars:
            raise ExerciseLoadError(f"/variables/{i}/name", f"duplicate variable '{v['name']}'")
        seen_vars.add(v["name"])
        variables.append(VariableSpec(v["name"], v["code"], v["kind"]))

    stages: dict[str, Stage] = {}
    carry_seen: set[str] = set()
    for sid, s in data["stages"].items():
        base = f"/stages/{sid}"
        inputs: list[InputElement] = []
        input_ids: set[str] = set()
        for j, el in enumerate(s["inputs"]):
            if el["id"] in input_ids:
                raise ExerciseLoadError(f"{base}/inputs/{j}/id", f"duplicate input id '{el['id']}'")
            input_ids.add(el["id"])
            kind = el["kind"]
            options = tuple(el.get("options", ()))
            if kind in CHOICE_KINDS and not options:
                raise ExerciseLoadError(f"{base}/inputs/{j}", f"{kind} element needs options")
            carry = el.get("carryForwardAs")
            if carry:
                if carry in carry_seen:
                    raise ExerciseLoadError(
                        f"{base}/inputs/{j}/carryForwardAs",
                        f"carry-forward name '{carry}' used twice")
                carry_seen.add(carry)
            inputs.append(InputElement(el["id"], kind, options, carry))

        rules: list[FeedbackRule] = []
        for j, r in enumerate(s["rules"]):
            cond = _parse_expr_at(r["condition"], f"{base}/rules/{j}/condition")
            rules.append(FeedbackRule(
                id=r.get("id", f"rule{j}"),
                condition_text=r["condition"],
                condition=cond,
                message=r.get("message"),
                score=int(r["score"]),
                advance=bool(r.get("advance", True)),
            ))

        transitions: list[Transition] = []
        for j, t in enumerate(s.get("transitions", [])):
            cond = _parse_expr_at(t["when"], f"{base}/transitions/{j}/when")
            transitions.append(Transition(t["when"], cond, t["target"]))

        tol = s.get("tolerance", {})
        stages[sid] = Stage(
            id=sid,
            task=s["task"],
            inputs=tuple(inputs),
            hints=tuple(s.get("hints", ())),
            rules=tuple(rules),
            solution=s.get("solution"),
            transitions=tuple(transitions),
            next=s.get("next"),
            fallback=s.get("fallback"),
            terminal=bool(s.get("terminal", False)),
            repeatable=bool(s.get("repeatable", True)),
            skippable=bool(s.get("skippable", False)),
            weight=float(s.get("weight", 1.0)),
            tolerance=ToleranceSpec(
                decimals=int(tol.get("decimals", 4)),
                corridor=float(tol.get("corridor", 0.0)),
            ),
        )

    entry = data["entry"]
    if entry not in stages:
        raise ExerciseLoadError("/entry", f"entry stage '{entry}' does not exist")
    for sid, stage in stages.items():
        for j, t in enumerate(stage.transitions):
            if t.target not in stages:
                raise ExerciseLoadError(
                    f"/stages/{sid}/transitions/{j}/target",
                    f"transition target '{t.target}' does not exist")
        if stage.next is not None and stage.next not in stages:
            raise ExerciseLoadError(f"/stages/{sid}/next", f"stage '{stage.next}' does not exist")
        if stage.fallback is not None and stage.fallback not in stages:
            raise ExerciseLoadError(
                f"/stages/{sid}/fallback", f"stage '{stage.fallback}' does not exist")

    terminal_ids = frozenset(sid for sid, s in stages.items() if s.terminal)
    return ExerciseDefinition(
        id=data["id"],
        title=data["title"],
        variables=tuple(variables),
        stages=stages,
        entry=entry,
        terminal_ids=terminal_ids,
        modes=tuple(data.get("modes", ("formative", "summative", "exam"))),
    )


def load_exercise_file(path) -> ExerciseDefinition:
    from pathlib import Path

    return load_exercise(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Validation


_PLACEHOLDER_RE = re.compile(
    r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\|\s*round\s*:\s*(\d+)\s*)?\}\}")


def template_names(template: str) -> set[str]:
    return {m.group(1) for m in _PLACEHOLDER_RE.finditer(template)}


def _stage_edges(stage: Stage) -> set[str]:
    targets = {t.target for t in stage.transitions}
    if stage.next:
        targets.add(stage.next)
    if stage.fallback:
        targets.add(stage.fallback)
    return targets


def _referenced_names(stage: Stage) -> set[str]:
    """Identifiers a stage's templates, rules and transitions can consume."""
    names: set[str] = set()
    for text in (stage.task, stage.solution or "", *stage.hints):
        names |= template_names(text)
    for rule in stage.rules:
        names |= expr.free_identifiers(rule.condition)
        if rule.message:
            names |= template_names(rule.message)
    for t in stage.transitions:
        names |= expr.free_identifiers(t.condition)
    return names


def carry_consumers(definition: ExerciseDefinition) -> dict[str, set[str]]:
    """Map each carry-forward name to the ids of stages that reference it."""
    out: dict[str, set[str]] = {}
    carries: dict[str, str] = {}
    for sid, stage in definition.stages.items():
        for name in stage.carry_names():
            carries[name] = sid
    for name, origin in carries.items():
        users = {sid for sid, stage in definition.stages.items()
                 if sid != origin and name in _referenced_names(stage)}
        out[name] = users
    return out


def validate_exercise(definition: ExerciseDefinition) -> list[Diagnostic]:
    """Semantic diagnostics over a loaded definition; empty means clean."""
    diags: list[Diagnostic] = []

    def err(path: str, message: str) -> None:
        diags.append(Diagnostic("error", path, message))

    def warn(path: str, message: str) -> None:
        diags.append(Diagnostic("warning", path, message))

    # variable ordering: spec i may reference only earlier specs
    known: set[str] = set()
    for i, spec in enumerate(definition.variables):
        try:
            names = expr.free_identifiers(expr.parse(spec.code))
        except ExprSyntaxError as exc:
            err(f"/variables/{i}/code", f"bad expression: {exc}")
            known.add(spec.name)
            continue
        forward = names - known - set(expr.CONSTANTS)
        if forward:
            err(f"/variables/{i}/code",
                f"forward or unknown reference to {sorted(forward)}")
        known.add(spec.name)

    # reachability from entry
    reachable: set[str] = set()
    frontier = [definition.entry]
    while frontier:
        sid = frontier.pop()
        if sid in reachable:
            continue
        reachable.add(sid)
        frontier.extend(_stage_edges(definition.stages[sid]))
    for sid in definition.stages:
        if sid not in reachable:
            err(f"/stages/{sid}", "stage is unreachable from the entry stage")

    # every stage must be able to reach a terminal stage
    if not definition.terminal_ids:
        err("/stages", "no terminal stage defined")
    else:
        can_finish: set[str] = set(definition.terminal_ids)
        changed = True
        while changed:
            changed = False
            for sid, stage in definition.stages.items():
                if sid in can_finish:
                    continue
                if _stage_edges(stage) & can_finish:
                    can_finish.add(sid)
                    changed = True
        for sid in definition.stages:
            if sid not in can_finish:
                err(f"/stages/{sid}", "no terminal stage is reachable from here (dead end)")

    # the stage graph must be acyclic (redo is modelled as staying, not a cycle)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {sid: WHITE for sid in definition.stages}

    def visit(sid: str) -> bool:
        color[sid] = GREY
        for nxt in _stage_edges(definition.stages[sid]):
            if color[nxt] == GREY:
                return False
            if color[nxt] == WHITE and not visit(nxt):
                return False
        color[sid] = BLACK
        return True

    for sid in definition.stages:
        if color[sid] == WHITE and not visit(sid):
            err(f"/stages/{sid}", "stage graph contains a cycle")
            break

    consumers = carry_consumers(definition)
    for sid, stage in definition.stages.items():
        base = f"/stages/{sid}"

        if not stage.rules:
            err(f"{base}/rules", "stage has no feedback rules")
        else:
            last = stage.rules[-1]
            if last.condition != expr.Name("true"):
                err(f"{base}/rules", "last rule must be a catch-all with condition 'true'")

        if not stage.terminal and stage.next is None:
            err(f"{base}/next", "non-terminal stage needs a default next stage")

        for name in stage.carry_names():
            if consumers.get(name) and stage.fallback is None:
                err(f"{base}/fallback",
                    f"fallback required: carry-forward '{name}' is consumed by "
                    f"{sorted(consumers[name])}")

        # a test-only exercise gains nothing from redo config; flag the intent gap
        test_only = "formative" not in definition.modes
        if test_only and stage.repeatable:
            warn(f"{base}/repeatable",
                 "stage allows redo but the exercise is intended for tests; "
                 "repeats are suppressed there")

    return diags


# ---------------------------------------------------------------------------
# Rendering


def format_value(value) -> str:
    """Canonical display text for a bound value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return value
    if isinstance(value, list):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, ImageValue):
        return f"media://{value.media_id}"
    if isinstance(value, (expr.Num, expr.Str, expr.Name, expr.Unary, expr.Binary, expr.Call)):
        return expr.serialize(value)
    raise TemplateError(f"value of type {type(value).__name__} cannot be rendered")


def render_template(template: str, bindings: Mapping[str, object]) -> str:
    """Fill `{{name}}` / `{{name | round:d}}` placeholders from bindings."""

    def sub(m: re.Match) -> str:
        name, digits = m.group(1), m.group(2)
        if name not in bindings:
            raise TemplateError(f"unbound placeholder '{name}'")
        value = bindings[name]
        if digits is None:
            return format_value(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TemplateError(f"round filter applied to non-numeric '{name}'")
        d = int(digits)
        return f"{round_half_away(float(value), d):.{d}f}"

    return _PLACEHOLDER_RE.sub(sub, template)


# ---------------------------------------------------------------------------
# Instantiation

_KIND_CHECKS = {
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "string": lambda v: isinstance(v, str),
    "vector": lambda v: isinstance(v, list),
    "image": lambda v: isinstance(v, ImageValue),
}


def instantiate(definition: ExerciseDefinition, conn: WorkspaceConnection,
                seed: int) -> dict[str, object]:
    """Evaluate the variable specs in order inside the workspace.

    All values persist in the workspace for the session's lifetime; the
    returned dict is the engine-side mirror of those bindings.
    """
    bindings: dict[str, object] = {}
    try:
        conn.eval(f"setseed({int(seed)})")
    except BackendEvalError as exc:
        raise InstantiationError(f"cannot seed workspace: {exc}") from exc
    for spec in definition.variables:
        try:
            value = conn.eval(f"{spec.name} := {spec.code}")
        except BackendEvalError as exc:
            raise InstantiationError(
                f"variable '{spec.name}' failed to evaluate: {exc}") from exc
        if not _KIND_CHECKS[spec.kind](value):
            raise InstantiationError(
                f"variable '{spec.name}' produced {type(value).__name__}, "
                f"expected kind '{spec.kind}'")
        bindings[spec.name] = value
    return bindings

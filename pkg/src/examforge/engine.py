"""Session engine: drives one student attempt through the stage state machine,
the feedback-rule cascade, hints, skips, fallback routing and grading.

All operations on one session are serialized through the session's lock;
distinct sessions are independent and may run fully concurrently.
"""
from __future__ import annotations

import logging
import re
import threading
import uuid
from dataclasses import dataclass, field
from random import Random
from typing import Mapping

from . import expr
from .client import BackendPool, WorkspaceConnection
from .exercise import (
    CHOICE_KINDS,
    ExerciseDefinition,
    Stage,
    carry_consumers,
    corridor_accepts,
    format_value,
    instantiate,
    render_template,
    validate_exercise,
)
from .expr import EvalError, Expr, ExprSyntaxError, round_half_away

log = logging.getLogger(__name__)

MODES = ("formative", "summative", "exam")
DEFAULT_EQUIV_INTERVAL = (-10.0, 10.0)


class SessionError(Exception):
    pass


class InvalidExercise(SessionError):
    def __init__(self, diagnostics):
        super().__init__("exercise failed validation: "
                         + "; ".join(f"{d.path}: {d.message}" for d in diagnostics))
        self.diagnostics = diagnostics


class SessionFinishedError(SessionError):
    pass


class ModeViolation(SessionError):
    pass


class HintsExhausted(SessionError):
    pass


class NotSkippable(SessionError):
    pass


class MalformedInputs(SessionError):
    pass


@dataclass
class EngineConfig:
    redo_cap: int = 10  # formative attempts per stage before forced advance


@dataclass(frozen=True)
class SubmissionRecord:
    stage_id: str
    raw_inputs: dict
    parsed: dict
    parse_failed: bool
    rule_id: str | None
    rule_index: int | None
    score: int
    outcome: str  # advanced | redo | fallback
    next_stage: str | None


@dataclass
class SubmissionResult:
    outcome: str
    stage_id: str
    score: int
    rule_id: str | None
    message: str | None
    next_stage: str | None
    completed: bool  # terminal stage answered; only finish() remains


@dataclass
class SkipResult:
    stage_id: str
    solution: str | None
    next_stage: str | None
    completed: bool


@dataclass(frozen=True)
class SessionResult:
    session_id: str
    exercise_id: str
    mode: str
    seed: int
    total: int
    stage_scores: dict
    path: list

    def as_dict(self) -> dict:
        return {
            "sessionId": self.session_id,
            "exerciseId": self.exercise_id,
            "mode": self.mode,
            "seed": self.seed,
            "total": self.total,
            "stageScores": dict(self.stage_scores),
            "path": list(self.path),
        }


@dataclass
class Session:
    session_id: str
    definition: ExerciseDefinition
    mode: str
    seed: int
    bindings: dict
    conn: WorkspaceConnection
    current_stage: str
    status: str = "active"
    awaiting_finish: bool = False
    stage_attempts: dict = field(default_factory=dict)
    hints_consumed: dict = field(default_factory=dict)
    stage_scores: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    path: list = field(default_factory=list)
    result: SessionResult | None = None
    lock: threading.RLock = field(default_factory=threading.RLock)

    @property
    def exercise_id(self) -> str:
        return self.definition.id


_NUMERIC_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_numeric_input(raw) -> float | None:
    """Student numeric input: optional sign, '.' separator, scientific notation.
    Returns None when the text is not a number (the fallback trigger)."""
    if isinstance(raw, bool):
        return None
    if isinstance(raw, (int, float)):
        return float(raw)
    text = str(raw).strip()
    if not _NUMERIC_RE.match(text):
        return None
    try:
        return float(text)
    except ValueError:
        return None


class SessionEngine:
    def __init__(self, pool: BackendPool, store=None, config: EngineConfig | None = None):
        self.pool = pool
        self.store = store
        self.config = config or EngineConfig()
        self._validated: set[str] = set()
        self._consumers: dict[str, dict[str, set[str]]] = {}

    # -- lifecycle -----------------------------------------------------------

    def start_session(self, definition: ExerciseDefinition, mode: str, seed: int,
                      session_id: str | None = None) -> Session:
        if mode not in MODES:
            raise MalformedInputs(f"unknown mode {mode!r}")
        if mode not in definition.modes:
            raise ModeViolation(f"exercise '{definition.id}' is not offered in {mode} mode")
        if definition.id not in self._validated:
            errors = [d for d in validate_exercise(definition) if d.severity == "error"]
            if errors:
                raise InvalidExercise(errors)
            self._validated.add(definition.id)
            self._consumers[definition.id] = carry_consumers(definition)
        session_id = session_id or uuid.uuid4().hex
        conn = self.pool.acquire(session_id, definition.id)
        bindings = instantiate(definition, conn, seed)
        session = Session(
            session_id=session_id,
            definition=definition,
            mode=mode,
            seed=int(seed),
            bindings=bindings,
            conn=conn,
            current_stage=definition.entry,
            path=[definition.entry],
        )
        self._emit(session, "sessionStarted", {
            "exerciseId": definition.id, "mode": mode, "seed": int(seed)})
        return session

    def finish_session(self, session: Session, abandon: bool = False) -> SessionResult:
        with session.lock:
            if session.status == "finished":
                return session.result  # idempotent
            stage = session.definition.stages[session.current_stage]
            if not (stage.terminal or session.awaiting_finish or abandon):
                raise SessionError("current stage is not terminal; pass abandon to force")
            weights = 0.0
            acc = 0.0
            for sid in dict.fromkeys(session.path):
                w = session.definition.stages[sid].weight
                weights += w
                acc += w * session.stage_scores.get(sid, 0)
            total = int(round_half_away(acc / weights, 0)) if weights > 0 else 0
            result = SessionResult(
                session_id=session.session_id,
                exercise_id=session.exercise_id,
                mode=session.mode,
                seed=session.seed,
                total=total,
                stage_scores=dict(session.stage_scores),
                path=list(session.path),
            )
            session.status = "finished"
            session.result = result
            self.pool.close(session.session_id, session.exercise_id)
            self._emit(session, "sessionFinished", result.as_dict())
            return result

    # -- views ---------------------------------------------------------------

    def stage_view(self, session: Session) -> dict:
        with session.lock:
            self._check_active(session)
            stage = session.definition.stages[session.current_stage]
            view = {
                "stage": stage.id,
                "mode": session.mode,
                "task": render_template(stage.task, session.bindings),
                "inputs": [
                    {
                        "id": e.id,
                        "kind": e.kind,
                        **({"options": [render_template(o, session.bindings)
                                        for o in e.options]} if e.options else {}),
                    }
                    for e in stage.inputs
                ],
                "skippable": bool(stage.skippable),
                "terminal": bool(stage.terminal),
                "completed": session.awaiting_finish,
            }
            if session.mode == "formative":
                used = session.hints_consumed.get(stage.id, 0)
                view["hintAvailable"] = used < len(stage.hints)
                view["nextHintIndex"] = used
            return view

    # -- submission ----------------------------------------------------------

    def submit(self, session: Session, inputs: Mapping) -> SubmissionResult:
        with session.lock:
            self._check_active(session)
            if session.awaiting_finish:
                raise SessionError("final stage already answered; call finish")
            stage = session.definition.stages[session.current_stage]
            element_ids = {e.id for e in stage.inputs}
            if set(inputs) != element_ids:
                missing = element_ids - set(inputs)
                extra = set(inputs) - element_ids
                raise MalformedInputs(
                    f"inputs must cover the stage elements exactly "
                    f"(missing {sorted(missing)}, unexpected {sorted(extra)})")

            parsed, parse_failed = self._parse_inputs(stage, inputs)
            attempt = session.stage_attempts.get(stage.id, 0)
            session.stage_attempts[stage.id] = attempt + 1

            if parse_failed and stage.fallback is not None:
                session.stage_scores.setdefault(stage.id, 0)
                record = SubmissionRecord(
                    stage_id=stage.id, raw_inputs=dict(inputs),
                    parsed=_recordable(parsed), parse_failed=True,
                    rule_id=None, rule_index=None, score=0,
                    outcome="fallback", next_stage=stage.fallback)
                self._advance(session, stage.fallback)
                self._emit_submission(session, record)
                return SubmissionResult(
                    outcome="fallback", stage_id=stage.id, score=0, rule_id=None,
                    message=None, next_stage=stage.fallback,
                    completed=session.awaiting_finish)

            env = dict(session.bindings)
            env.update(self._element_bindings(stage, parsed))
            rng = self._condition_rng(session, stage.id, attempt)
            predicates = self._predicates(session, stage, env, rng)

            rule_index, rule = self._match_rule(stage, env, rng, predicates)
            score = int(rule.score)
            prev = session.stage_scores.get(stage.id, 0)
            session.stage_scores[stage.id] = max(prev, score)

            message = None
            if session.mode == "formative" and rule.message:
                message = self._render_loose(rule.message, env)

            self._apply_carry(session, stage, parsed)

            if session.mode == "formative" and not rule.advance and stage.repeatable \
                    and attempt + 1 < self.config.redo_cap:
                outcome, next_stage = "redo", None
            else:
                outcome = "advanced"
                next_stage = self._resolve_transitions(session, stage, env)
                self._advance(session, next_stage)

            record = SubmissionRecord(
                stage_id=stage.id, raw_inputs=dict(inputs), parsed=_recordable(parsed),
                parse_failed=parse_failed, rule_id=rule.id, rule_index=rule_index,
                score=score, outcome=outcome, next_stage=next_stage)
            self._emit_submission(session, record)
            return SubmissionResult(
                outcome=outcome, stage_id=stage.id, score=score, rule_id=rule.id,
                message=message, next_stage=next_stage,
                completed=session.awaiting_finish)

    def request_hint(self, session: Session) -> str:
        with session.lock:
            self._check_active(session)
            if session.mode != "formative":
                raise ModeViolation("hints are not available during tests")
            stage = session.definition.stages[session.current_stage]
            used = session.hints_consumed.get(stage.id, 0)
            if used >= len(stage.hints):
                raise HintsExhausted(f"stage '{stage.id}' has no further hints")
            text = render_template(stage.hints[used], session.bindings)
            session.hints_consumed[stage.id] = used + 1
            self._emit(session, "hintRequested", {"stage": stage.id, "index": used})
            return text

    def skip_stage(self, session: Session) -> SkipResult:
        with session.lock:
            self._check_active(session)
            if session.awaiting_finish:
                raise SessionError("final stage already answered; call finish")
            stage = session.definition.stages[session.current_stage]
            if not stage.skippable:
                raise NotSkippable(f"stage '{stage.id}' cannot be skipped")
            session.stage_scores.setdefault(stage.id, 0)
            solution = None
            if session.mode == "formative" and stage.solution:
                solution = render_template(stage.solution, session.bindings)
            if stage.terminal:
                next_stage = None
            elif stage.fallback is not None and self._carry_is_consumed(session, stage):
                # later stages would consume a value that now does not exist
                next_stage = stage.fallback
            else:
                next_stage = stage.next
            self._advance(session, next_stage)
            self._emit(session, "stageSkipped", {"stage": stage.id, "next": next_stage})
            return SkipResult(stage_id=stage.id, solution=solution,
                              next_stage=next_stage, completed=session.awaiting_finish)

    def resolve_path(self, session: Session, overrides: Mapping) -> str | None:
        """Transition target the current stage would take under the given
        submission bindings (exposed for tests and tooling)."""
        with session.lock:
            stage = session.definition.stages[session.current_stage]
            env = dict(session.bindings)
            env.update(overrides)
            return self._resolve_transitions(session, stage, env)

    # -- internals -----------------------------------------------------------

    def _check_active(self, session: Session) -> None:
        if session.status != "active":
            raise SessionFinishedError(f"session {session.session_id} is finished")

    def _parse_inputs(self, stage: Stage, inputs: Mapping) -> tuple[dict, bool]:
        parsed: dict = {}
        failed = False
        for elem in stage.inputs:
            raw = inputs[elem.id]
            if elem.kind in CHOICE_KINDS:
                try:
                    idx = int(raw)
                except (TypeError, ValueError):
                    raise MalformedInputs(
                        f"element '{elem.id}' expects an option index, got {raw!r}")
                if not 0 <= idx < len(elem.options):
                    raise MalformedInputs(
                        f"element '{elem.id}' option index {idx} out of range")
                parsed[elem.id] = idx
            elif elem.kind == "numericFill":
                value = parse_numeric_input(raw)
                parsed[elem.id] = value
                failed = failed or value is None
            else:  # formulaFill
                try:
                    parsed[elem.id] = expr.parse(str(raw))
                except ExprSyntaxError:
                    parsed[elem.id] = None
                    failed = True
        return parsed, failed

    def _element_bindings(self, stage: Stage, parsed: Mapping) -> dict:
        env: dict = {}
        by_kind: dict[str, list] = {"choice": [], "input": [], "sub": []}
        for elem in stage.inputs:
            value = parsed.get(elem.id)
            if value is None:
                continue
            if elem.kind in CHOICE_KINDS:
                env[f"choice_{elem.id}"] = value
                by_kind["choice"].append(value)
            elif elem.kind == "numericFill":
                env[f"input_{elem.id}"] = value
                by_kind["input"].append(value)
            else:
                env[f"sub_{elem.id}"] = value
                by_kind["sub"].append(value)
        for alias, values in by_kind.items():
            if len(values) == 1:
                env[alias] = values[0]
        return env

    def _condition_rng(self, session: Session, stage_id: str, attempt: int) -> Random:
        return Random(f"cond:{session.seed}:{stage_id}:{attempt}")

    def _match_rule(self, stage: Stage, env: dict, rng: Random, predicates: dict):
        for index, rule in enumerate(stage.rules):
            try:
                value = expr.evaluate(rule.condition, env, rng=rng, functions=predicates)
            except Exception as exc:  # author bug: rule counts as not matched
                log.warning("rule %s/%s condition failed: %s", stage.id, rule.id, exc)
                continue
            if value is True:
                return index, rule
        # validation guarantees a catch-all, so this is unreachable for valid
        # definitions; fail loudly rather than inventing an outcome
        raise SessionError(f"no feedback rule matched in stage '{stage.id}'")

    def _predicates(self, session: Session, stage: Stage, env: dict, rng: Random) -> dict:
        def coerce(value) -> Expr:
            if isinstance(value, (expr.Num, expr.Str, expr.Name, expr.Unary,
                                  expr.Binary, expr.Call)):
                return value
            if isinstance(value, str):
                return expr.parse(value)
            raise EvalError("domain", "expected a formula or formula text")

        def dependson(e, name) -> bool:
            return expr.depends_on(coerce(e), str(name))

        def usesfunction(e, fname) -> bool:
            return expr.uses_function(coerce(e), str(fname))

        def argumentof(e, fname, occurrence):
            return expr.argument_of(coerce(e), str(fname), int(occurrence))

        def evalat(e, name, value):
            local = dict(env)
            local[str(name)] = value
            return expr.evaluate(coerce(e), local, rng=rng)

        def within(submitted, correct) -> bool:
            a = _as_number(submitted, "within")
            b = _as_number(correct, "within")
            return corridor_accepts(a, b, stage.tolerance)

        def equivalent_pred(a, b, *spec) -> bool:
            ea, eb = coerce(a), coerce(b)
            if len(spec) % 3 != 0:
                raise EvalError("domain",
                                "equivalent takes (name, lo, hi) sampling triplets")
            forced: dict[str, tuple[float, float]] = {}
            for i in range(0, len(spec), 3):
                forced[str(spec[i])] = (_as_number(spec[i + 1], "equivalent"),
                                        _as_number(spec[i + 2], "equivalent"))
            free = (expr.free_identifiers(ea) | expr.free_identifiers(eb)) \
                - set(expr.CONSTANTS)
            varspecs: dict[str, tuple[float, float]] = dict(forced)
            fixed: dict = {}
            for name in free:
                if name in forced:
                    continue
                if name in env and isinstance(env[name], (int, float)) \
                        and not isinstance(env[name], bool):
                    fixed[name] = env[name]
                else:
                    varspecs[name] = DEFAULT_EQUIV_INTERVAL
            ordered = sorted(varspecs.items())
            return expr.equivalent(ea, eb, ordered, rng=rng, bindings=fixed)

        return {
            "dependson": dependson,
            "usesfunction": usesfunction,
            "argumentof": argumentof,
            "evalat": evalat,
            "within": within,
            "equivalent": equivalent_pred,
        }

    def _render_loose(self, template: str, env: Mapping) -> str:
        renderable = {k: v for k, v in env.items() if v is not None}
        try:
            return render_template(template, renderable)
        except Exception as exc:  # an author's bad placeholder must not crash a run
            log.warning("feedback template failed to render: %s", exc)
            return template

    def _apply_carry(self, session: Session, stage: Stage, parsed: Mapping) -> None:
        for elem in stage.inputs:
            name = elem.carry_forward_as
            if not name:
                continue
            value = parsed.get(elem.id)
            if value is None:
                continue
            session.conn.eval(f"{name} := {_workspace_literal(value)}")
            session.bindings[name] = value

    def _carry_is_consumed(self, session: Session, stage: Stage) -> bool:
        consumers = self._consumers.get(session.exercise_id)
        if consumers is None:
            consumers = carry_consumers(session.definition)
            self._consumers[session.exercise_id] = consumers
        return any(consumers.get(name) for name in stage.carry_names())

    def _resolve_transitions(self, session: Session, stage: Stage, env: dict) -> str | None:
        if stage.terminal:
            return None
        rng = Random(f"path:{session.seed}:{stage.id}")
        for t in stage.transitions:
            try:
                value = expr.evaluate(t.condition, env, rng=rng)
            except Exception as exc:
                log.warning("transition %s -> %s condition failed: %s",
                            stage.id, t.target, exc)
                continue
            if value is True:
                return t.target
        return stage.next

    def _advance(self, session: Session, next_stage: str | None) -> None:
        if next_stage is None:
            session.awaiting_finish = True
        else:
            session.current_stage = next_stage
            session.path.append(next_stage)

    def _emit_submission(self, session: Session, record: SubmissionRecord) -> None:
        session.records.append(record)
        self._emit(session, "submissionMade", {
            "stage": record.stage_id,
            "rawInputs": record.raw_inputs,
            "parsed": record.parsed,
            "parseFailed": record.parse_failed,
            "rule": record.rule_id,
            "ruleIndex": record.rule_index,
            "score": record.score,
            "outcome": record.outcome,
            "next": record.next_stage,
        })

    def _emit(self, session: Session, kind: str, payload: dict) -> None:
        if self.store is None:
            return
        try:
            self.store.append(kind, session.session_id, payload)
        except Exception:
            if session.mode == "exam":
                raise
            log.exception("event append failed (non-exam mode, continuing)")


def _as_number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EvalError("domain", f"{what} requires a number")
    return float(value)


def _recordable(parsed: Mapping) -> dict:
    out = {}
    for key, value in parsed.items():
        if value is None:
            out[key] = None
        elif isinstance(value, (int, float, bool, str)):
            out[key] = value
        else:
            out[key] = format_value(value)
    return out


def _workspace_literal(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (expr.Num, expr.Str, expr.Name, expr.Unary, expr.Binary, expr.Call)):
        text = expr.serialize(value)
        return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise SessionError(f"cannot carry a {type(value).__name__} into the workspace")


# ---------------------------------------------------------------------------
# Replay


def replay_session(definition: ExerciseDefinition, events: list, pool: BackendPool,
                   session_id: str | None = None) -> SessionResult:
    """Re-run a recorded session from its event sequence and return the result.

    Determinism contract: with the recorded seed and raw inputs, the replay
    takes the same path and produces the same scores as the live run.
    """
    engine = SessionEngine(pool)
    started = next(e for e in events if e["kind"] == "sessionStarted")
    mode = started["payload"]["mode"]
    seed = started["payload"]["seed"]
    session = engine.start_session(
        definition, mode, seed, session_id=session_id or f"replay-{uuid.uuid4().hex[:8]}")
    result = None
    for event in events:
        kind = event["kind"]
        if kind == "submissionMade":
            engine.submit(session, event["payload"]["rawInputs"])
        elif kind == "hintRequested":
            engine.request_hint(session)
        elif kind == "stageSkipped":
            engine.skip_stage(session)
        elif kind == "sessionFinished":
            result = engine.finish_session(session, abandon=True)
    if result is None:
        result = engine.finish_session(session, abandon=True)
    return result

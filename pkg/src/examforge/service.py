"""HTTP API over the session engine, for the player UI and scripted clients.

Sessions are server-side state addressed by an unguessable token; the
workspace behind a session lives for exactly as long as the session does.
"""
from __future__ import annotations

import logging
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Response
from pydantic import BaseModel

from .client import BackendPool, BackendUnavailable
from .engine import (
    HintsExhausted,
    MalformedInputs,
    ModeViolation,
    NotSkippable,
    Session,
    SessionEngine,
    SessionFinishedError,
    SessionError,
)
from .events import EventStore, aggregate_usage
from .exercise import ExerciseDefinition, load_exercise_file, validate_exercise
from .expr import ImageValue

log = logging.getLogger(__name__)


@dataclass
class ServiceConfig:
    exercises_dir: Path
    backend: tuple[str, int]
    data_dir: Path | None = None
    scratch_root: Path | None = None
    cors_origins: list[str] = field(default_factory=list)
    instructor_token: str | None = None


class StartSessionBody(BaseModel):
    exerciseId: str
    mode: str = "formative"
    seed: int | None = None


class SubmitBody(BaseModel):
    inputs: dict


def load_exercise_dir(path: Path) -> dict[str, ExerciseDefinition]:
    definitions: dict[str, ExerciseDefinition] = {}
    for file in sorted(Path(path).glob("*.json")):
        definition = load_exercise_file(file)
        errors = [d for d in validate_exercise(definition) if d.severity == "error"]
        if errors:
            details = "; ".join(f"{d.path}: {d.message}" for d in errors)
            raise ValueError(f"{file.name} failed validation: {details}")
        if definition.id in definitions:
            raise ValueError(f"duplicate exercise id '{definition.id}' in {file.name}")
        definitions[definition.id] = definition
    return definitions


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="examforge", version="0.1.0")

    if config.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    definitions = load_exercise_dir(config.exercises_dir)
    pool = BackendPool(config.backend, scratch_root=config.scratch_root)
    store = EventStore(config.data_dir) if config.data_dir else None
    engine = SessionEngine(pool, store=store)

    sessions: dict[str, Session] = {}
    media: dict[str, ImageValue] = {}
    registry_lock = threading.Lock()

    app.state.engine = engine
    app.state.pool = pool
    app.state.definitions = definitions

    def get_session(token: str) -> Session:
        session = sessions.get(token)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session token")
        return session

    def register_media(session: Session) -> None:
        with registry_lock:
            for value in session.bindings.values():
                if isinstance(value, ImageValue):
                    media[value.media_id] = value

    def run(call, *args):
        """Map engine failures onto HTTP statuses; hide backend internals."""
        try:
            return call(*args)
        except SessionFinishedError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except (ModeViolation, NotSkippable) as exc:
            raise HTTPException(status_code=403, detail=str(exc)) from exc
        except HintsExhausted as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except MalformedInputs as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except SessionError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except BackendUnavailable as exc:
            log.error("backend failure: %s", exc)
            raise HTTPException(status_code=500, detail="evaluation backend failure") from exc

    def submission_payload(session: Session, result) -> dict:
        body: dict = {"outcome": result.outcome, "completed": result.completed}
        if session.mode == "formative":
            body["score"] = result.score
            if result.message is not None:
                body["feedback"] = result.message
        if not result.completed:
            body["nextStageView"] = engine.stage_view(session)
        return body

    @app.get("/exercises")
    def list_exercises() -> list[dict]:
        return [
            {"id": d.id, "title": d.title, "modesAllowed": list(d.modes)}
            for d in definitions.values()
        ]

    @app.post("/sessions", status_code=200)
    def start_session(body: StartSessionBody) -> dict:
        definition = definitions.get(body.exerciseId)
        if definition is None:
            raise HTTPException(status_code=404, detail="unknown exercise")
        seed = body.seed if body.seed is not None else secrets.randbits(48)
        session = run(engine.start_session, definition, body.mode, seed)
        register_media(session)
        token = secrets.token_urlsafe(24)
        with registry_lock:
            sessions[token] = session
        return {"token": token, "firstStageView": engine.stage_view(session)}

    @app.get("/sessions/{token}/stage")
    def current_stage(token: str) -> dict:
        session = get_session(token)
        return run(engine.stage_view, session)

    @app.post("/sessions/{token}/submissions")
    def submit(token: str, body: SubmitBody) -> dict:
        session = get_session(token)
        result = run(engine.submit, session, body.inputs)
        return submission_payload(session, result)

    @app.post("/sessions/{token}/hints")
    def hint(token: str) -> dict:
        session = get_session(token)
        text = run(engine.request_hint, session)
        return {"hintText": text}

    @app.post("/sessions/{token}/skip")
    def skip(token: str) -> dict:
        session = get_session(token)
        result = run(engine.skip_stage, session)
        body: dict = {"completed": result.completed}
        if result.solution is not None:
            body["solutionText"] = result.solution
        if not result.completed:
            body["nextStageView"] = engine.stage_view(session)
        return body

    @app.post("/sessions/{token}/finish")
    def finish(token: str) -> dict:
        session = get_session(token)
        result = run(engine.finish_session, session, True)
        return result.as_dict()

    @app.get("/stats")
    def stats(x_instructor_token: str | None = Header(default=None)) -> dict:
        if config.instructor_token and x_instructor_token != config.instructor_token:
            raise HTTPException(status_code=403, detail="instructor token required")
        if store is None:
            return {"perMode": {}}
        summary = aggregate_usage(store)
        return {
            "perMode": {
                mode: {
                    "exercises": usage.exercises,
                    "students": usage.students,
                    "submissions": usage.submissions,
                }
                for mode, usage in summary.per_mode.items()
            }
        }

    @app.get("/media/{media_id}")
    def get_media(media_id: str) -> Response:
        value = media.get(media_id)
        if value is None:
            raise HTTPException(status_code=404, detail="unknown media id")
        return Response(content=value.data, media_type=value.media_type)

    return app

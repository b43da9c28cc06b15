"""Author and operator command line: validate, preview, simulate, serve, stats,
and the reference backend."""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from .exercise import (
    ExerciseLoadError,
    load_exercise,
    render_template,
    validate_exercise,
)

EXIT_OK = 0
EXIT_DIAGNOSTICS = 1
EXIT_USAGE = 2


def _load_for_command(path: Path):
    """Returns (definition, diagnostics, exit_code); exit 2 for unreadable or
    non-JSON input, exit 1 for structural/semantic problems."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None, [], EXIT_USAGE
    try:
        json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        print(f"error: {path} is not a JSON document: {exc}", file=sys.stderr)
        return None, [], EXIT_USAGE
    try:
        definition = load_exercise(raw)
    except ExerciseLoadError as exc:
        print(f"{path}:{exc.path}: error: {exc}", file=sys.stderr)
        return None, [], EXIT_DIAGNOSTICS
    return definition, validate_exercise(definition), EXIT_OK


def cmd_validate(args) -> int:
    definition, diagnostics, code = _load_for_command(Path(args.path))
    if definition is None:
        return code
    for d in diagnostics:
        print(f"{args.path}:{d.path}: {d.severity}: {d.message}")
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        return EXIT_DIAGNOSTICS
    print(f"{args.path}: ok ({len(definition.stages)} stages, "
          f"{len(definition.variables)} variables)")
    return EXIT_OK


def cmd_preview(args) -> int:
    from .backend import EmbeddedBackend
    from .client import BackendPool
    from .exercise import instantiate
    from .expr import ImageValue

    if args.variants < 1:
        print("error: --variants must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    definition, diagnostics, code = _load_for_command(Path(args.path))
    if definition is None:
        return code
    if any(d.severity == "error" for d in diagnostics):
        for d in diagnostics:
            print(f"{args.path}:{d.path}: {d.severity}: {d.message}", file=sys.stderr)
        return EXIT_DIAGNOSTICS

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    with EmbeddedBackend() as backend:
        pool = BackendPool(backend.address)
        try:
            for i in range(args.variants):
                conn = pool.acquire(f"preview-{i}", definition.id)
                bindings = instantiate(definition, conn, seed=args.seed + i)
                variant_dir = out_root / f"variant_{i:03d}"
                variant_dir.mkdir(parents=True, exist_ok=True)
                summary = {}
                for name, value in bindings.items():
                    if isinstance(value, ImageValue):
                        media_file = variant_dir / f"{name}.svg"
                        media_file.write_bytes(value.data)
                        summary[name] = media_file.name
                    else:
                        summary[name] = value
                (variant_dir / "bindings.json").write_text(
                    json.dumps(summary, indent=2, sort_keys=True) + "\n")
                for sid, stage in definition.stages.items():
                    lines = [render_template(stage.task, bindings), ""]
                    for elem in stage.inputs:
                        lines.append(f"[{elem.kind}] {elem.id}")
                        for k, option in enumerate(elem.options):
                            lines.append(f"  {k}. {render_template(option, bindings)}")
                    (variant_dir / f"stage_{sid}.txt").write_text("\n".join(lines) + "\n")
                pool.close(f"preview-{i}", definition.id)
                print(f"{variant_dir}")
        finally:
            pool.close_all()
    return EXIT_OK


def _simulation_schema() -> dict:
    text = resources.files("examforge.schemas").joinpath("simulation.schema.json").read_text()
    return json.loads(text)


def _check_expectations(expect: dict, actual: dict) -> list[str]:
    failures = []
    for key, wanted in expect.items():
        if key.endswith("Contains"):
            field = {"feedbackContains": "feedback",
                     "hintContains": "hint",
                     "solutionContains": "solution"}[key]
            got = actual.get(field)
            if got is None or wanted not in got:
                failures.append(f"{key}: expected to find {wanted!r} in {got!r}")
        else:
            got = actual.get(key)
            if got != wanted:
                failures.append(f"{key}: expected {wanted!r}, got {got!r}")
    return failures


def cmd_simulate(args) -> int:
    import jsonschema

    from .backend import EmbeddedBackend
    from .client import BackendPool
    from .engine import SessionEngine

    script_path = Path(args.script)
    try:
        script = json.loads(script_path.read_text())
        jsonschema.validate(script, _simulation_schema())
    except OSError as exc:
        print(f"error: cannot read {script_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, jsonschema.ValidationError) as exc:
        print(f"error: invalid simulation script: {exc}", file=sys.stderr)
        return EXIT_USAGE

    exercises_dir = Path(args.exercises_dir)
    definition = None
    for file in sorted(exercises_dir.glob("*.json")):
        try:
            candidate = load_exercise(file.read_bytes())
        except ExerciseLoadError:
            continue
        if candidate.id == script["exerciseId"]:
            definition = candidate
            break
    if definition is None:
        print(f"error: exercise '{script['exerciseId']}' not found under "
              f"{exercises_dir}", file=sys.stderr)
        return EXIT_USAGE

    mode = script.get("mode", "formative")
    seed = script["seed"]
    name = script.get("name", script_path.stem)
    print(f"simulate {name} (exercise {definition.id}, mode {mode}, seed {seed})")

    failures_total = 0
    with EmbeddedBackend() as backend:
        pool = BackendPool(backend.address)
        engine = SessionEngine(pool)
        session = engine.start_session(definition, mode, seed)
        for i, action in enumerate(script["actions"], start=1):
            kind = action["action"]
            actual: dict = {}
            if kind == "submit":
                result = engine.submit(session, action.get("inputs", {}))
                actual = {
                    "stage": result.stage_id, "outcome": result.outcome,
                    "rule": result.rule_id, "score": result.score,
                    "nextStage": result.next_stage, "feedback": result.message,
                    "completed": result.completed,
                }
                print(f"  {i:02d} submit  stage={result.stage_id} "
                      f"outcome={result.outcome} rule={result.rule_id} "
                      f"score={result.score} next={result.next_stage or '-'}")
            elif kind == "hint":
                text = engine.request_hint(session)
                actual = {"stage": session.current_stage, "hint": text}
                print(f"  {i:02d} hint    stage={session.current_stage}")
            elif kind == "skip":
                result = engine.skip_stage(session)
                actual = {
                    "stage": result.stage_id, "solution": result.solution,
                    "nextStage": result.next_stage, "completed": result.completed,
                }
                print(f"  {i:02d} skip    stage={result.stage_id} "
                      f"next={result.next_stage or '-'}")
            else:  # finish
                result = engine.finish_session(session, abandon=True)
                actual = {"total": result.total, "stage": None,
                          "completed": True}
                print(f"  {i:02d} finish  total={result.total} "
                      f"path={'>'.join(result.path)}")
            for failure in _check_expectations(action.get("expect", {}), actual):
                failures_total += 1
                print(f"     FAIL {failure}")
        if session.status == "active":
            engine.finish_session(session, abandon=True)
        pool.close_all()

    if failures_total:
        print(f"result: FAILED ({len(script['actions'])} actions, "
              f"{failures_total} failed expectations)")
        return EXIT_DIAGNOSTICS
    print(f"result: ok ({len(script['actions'])} actions, 0 failed expectations)")
    return EXIT_OK


def _parse_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    import uvicorn

    from .client import BackendUnavailable, WorkspaceConnection
    from .service import ServiceConfig, create_app

    env = os.environ
    listen = env.get("EXAMFORGE_LISTEN", args.listen)
    backend_addr = env.get("EXAMFORGE_BACKEND", args.backend)
    data_dir = env.get("EXAMFORGE_DATA_DIR", args.data_dir)
    exercises_dir = env.get("EXAMFORGE_EXERCISES_DIR", args.exercises_dir)
    instructor_token = env.get("EXAMFORGE_INSTRUCTOR_TOKEN", args.instructor_token)
    cors = env.get("EXAMFORGE_CORS_ORIGINS", args.cors_origins)

    embedded = None
    if backend_addr:
        address = _parse_listen(backend_addr)
        try:
            probe = WorkspaceConnection(address)
            probe.close()
        except BackendUnavailable as exc:
            print(f"error: backend at {backend_addr} is unreachable: {exc}",
                  file=sys.stderr)
            return EXIT_DIAGNOSTICS
        scratch_root = None
    else:
        from .backend import EmbeddedBackend

        embedded = EmbeddedBackend()
        address = embedded.address
        scratch_root = embedded.scratch_root
        print(f"embedded backend on {address[0]}:{address[1]}")

    config = ServiceConfig(
        exercises_dir=Path(exercises_dir),
        backend=address,
        data_dir=Path(data_dir) if data_dir else None,
        scratch_root=scratch_root,
        cors_origins=[o for o in (cors or "").split(",") if o],
        instructor_token=instructor_token,
    )
    try:
        app = create_app(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if embedded:
            embedded.close()
        return EXIT_DIAGNOSTICS
    host, port = _parse_listen(listen)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    finally:
        if embedded:
            embedded.close()
    return EXIT_OK


def cmd_stats(args) -> int:
    from .events import EventStore, aggregate_usage, usage_table

    store = EventStore(Path(args.data_dir))
    print(usage_table(aggregate_usage(store)))
    return EXIT_OK


def cmd_backend(args) -> int:
    from .backend import serve_backend

    try:
        serve_backend(_parse_listen(args.listen), Path(args.scratch_dir),
                      seed=args.backend_seed)
    except OSError as exc:
        print(f"error: cannot bind {args.listen}: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="examforge",
        description="parameterized multi-stage exercise engine")
    parser.add_argument("--seed", type=int, default=2024,
                        help="base seed for deterministic commands")
    parser.add_argument("--exercises-dir", default="exercises",
                        help="directory of exercise definition files")
    parser.add_argument("--data-dir", default=None,
                        help="directory for the event log")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, *names):
        # global flags, also accepted after the subcommand
        if "seed" in names:
            p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        if "exercises" in names:
            p.add_argument("--exercises-dir", default=argparse.SUPPRESS)
        if "data" in names:
            p.add_argument("--data-dir", default=argparse.SUPPRESS)

    p = sub.add_parser("validate", help="check an exercise file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("preview", help="render N parameterized variants")
    p.add_argument("path")
    p.add_argument("--variants", "-n", type=int, default=3)
    p.add_argument("--out", default="preview-out")
    shared(p, "seed")
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("simulate", help="run a scripted session in-process")
    p.add_argument("script")
    shared(p, "exercises")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--listen", default="127.0.0.1:8080")
    p.add_argument("--backend", default=None,
                   help="backend addr:port (default: embedded backend)")
    p.add_argument("--instructor-token", default=None)
    p.add_argument("--cors-origins", default=None,
                   help="comma-separated allowed origins")
    shared(p, "exercises", "data")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stats", help="print usage figures from the event log")
    shared(p, "data")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("backend", help="run the reference evaluation backend")
    p.add_argument("--listen", default="127.0.0.1:6311")
    p.add_argument("--seed", dest="backend_seed", type=int, default=None,
                   help="fixed base seed for workspace RNGs (default: entropy)")
    p.add_argument("--scratch-dir", default="backend-scratch")
    p.set_defaults(func=cmd_backend)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "stats" and not args.data_dir:
        print("error: stats needs --data-dir", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Simulate a cohort of students across the shipped exercises, then print the
usage figures aggregated from the resulting event log.

Usage: generate_usage_report.py [students] [data_dir]
"""
import sys
import tempfile
from pathlib import Path
from random import Random

from examforge.backend import EmbeddedBackend
from examforge.client import BackendPool
from examforge.engine import SessionEngine
from examforge.events import EventStore, aggregate_usage, usage_table
from examforge.exercise import load_exercise_file

ROOT = Path(__file__).resolve().parent.parent


def answer_randomly(engine, session, rng):
    while not session.awaiting_finish and session.status == "active":
        stage = session.definition.stages[session.current_stage]
        if stage.skippable and rng.random() < 0.1:
            engine.skip_stage(session)
            continue
        inputs = {}
        for elem in stage.inputs:
            if elem.options:
                inputs[elem.id] = rng.randrange(len(elem.options))
            elif elem.kind == "numericFill":
                inputs[elem.id] = str(round(rng.uniform(-3, 40), 4))
            else:
                inputs[elem.id] = rng.choice(["tan(x)", "(1/pi)*atan((x-m)/k)+1/2"])
        engine.submit(session, inputs)
    return engine.finish_session(session)


def run(students: int, data_dir: Path) -> None:
    definitions = [load_exercise_file(p) for p in sorted((ROOT / "exercises").glob("*.json"))]
    rng = Random(1)
    with EmbeddedBackend() as backend:
        pool = BackendPool(backend.address)
        store = EventStore(data_dir, durable=False)
        engine = SessionEngine(pool, store=store)
        for i in range(students):
            definition = rng.choice(definitions)
            mode = rng.choice(["formative", "formative", "summative", "exam"])
            session = engine.start_session(
                definition, mode, seed=rng.getrandbits(32), session_id=f"demo-{i}")
            result = answer_randomly(engine, session, rng)
            print(f"{session.session_id}: {definition.id} [{mode}] -> {result.total}")
        pool.close_all()
        print()
        print(usage_table(aggregate_usage(store)))
        print(f"\nevent log written to {data_dir}")


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 25
    target = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp(prefix="examforge-log-"))
    run(n, target)

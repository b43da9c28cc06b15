"""Append-only event log (JSON lines, one file per UTC day) and the usage
aggregation computed over it."""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

EVENT_KINDS = (
    "sessionStarted",
    "submissionMade",
    "hintRequested",
    "stageSkipped",
    "sessionFinished",
)


class StorageError(Exception):
    pass


@dataclass(frozen=True)
class CorruptRecord:
    file: str
    line_number: int
    reason: str


@dataclass
class ModeUsage:
    exercises: int = 0
    students: int = 0
    submissions: int = 0


@dataclass
class UsageSummary:
    """Counts per assessment mode plus a per-exercise breakdown.

    '#Students' counts distinct session owners: sessions are the only identity
    the engine records, so one student practicing twice counts twice.
    """

    per_mode: dict = field(default_factory=dict)  # mode -> ModeUsage
    per_exercise: dict = field(default_factory=dict)  # (exercise, mode) -> ModeUsage

    def mode(self, mode: str) -> ModeUsage:
        return self.per_mode.get(mode, ModeUsage())


class EventStore:
    """Single-writer, append-only store.  Every append is flushed (and fsynced
    unless durable=False) before returning; sequence numbers are strictly
    increasing across files and process restarts."""

    def __init__(self, data_dir, durable: bool = True):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.durable = durable
        self._lock = threading.Lock()
        self._seq = self._last_sequence()

    def _files(self) -> list[Path]:
        return sorted(self.data_dir.glob("events-*.ndjson"))

    def _last_sequence(self) -> int:
        last = 0
        for path in self._files():
            for line in path.read_bytes().splitlines():
                try:
                    rec = json.loads(line)
                    last = max(last, int(rec["seq"]))
                except (ValueError, KeyError, TypeError):
                    continue
        return last

    def append(self, kind: str, session_id: str, payload: dict) -> int:
        if kind not in EVENT_KINDS:
            raise StorageError(f"unknown event kind {kind!r}")
        with self._lock:
            self._seq += 1
            record = {
                "seq": self._seq,
                "ts": datetime.now(timezone.utc).isoformat(),
                "session": session_id,
                "kind": kind,
                "payload": payload,
            }
            day = time.strftime("%Y%m%d", time.gmtime())
            path = self.data_dir / f"events-{day}.ndjson"
            line = json.dumps(record, separators=(",", ":"), ensure_ascii=False) + "\n"
            try:
                with open(path, "a", encoding="utf-8") as fh:
                    fh.write(line)
                    fh.flush()
                    if self.durable:
                        os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(f"append failed: {exc}") from exc
            return self._seq

    def read_events(self, tolerant: bool = True) -> tuple[list[dict], list[CorruptRecord]]:
        """All records in sequence order plus reports for unreadable lines.
        With tolerant=False the first corrupt line raises instead."""
        events: list[dict] = []
        corruptions: list[CorruptRecord] = []
        for path in self._files():
            for lineno, line in enumerate(path.read_bytes().splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    if not isinstance(rec, dict) or "kind" not in rec or "seq" not in rec:
                        raise ValueError("record missing required fields")
                except (ValueError, UnicodeDecodeError) as exc:
                    report = CorruptRecord(path.name, lineno, str(exc))
                    if not tolerant:
                        raise StorageError(f"{path.name}:{lineno}: {exc}") from exc
                    corruptions.append(report)
                    continue
                events.append(rec)
        events.sort(key=lambda r: r["seq"])
        return events, corruptions


def replay_sessions(store: EventStore, session_filter=None,
                    tolerant: bool = True) -> tuple[list[dict], list[CorruptRecord]]:
    """Fold the log into one result dict per finished session.

    Results carry the same fields the live engine returned (the finish event
    payload) plus the folded submission count, so they can be cross-checked
    against a deterministic re-run.
    """
    events, corruptions = store.read_events(tolerant=tolerant)
    submissions: dict[str, int] = {}
    results: list[dict] = []
    for rec in events:
        sid = rec.get("session", "")
        if session_filter is not None and not session_filter(sid):
            continue
        if rec["kind"] == "submissionMade":
            submissions[sid] = submissions.get(sid, 0) + 1
        elif rec["kind"] == "sessionFinished":
            result = dict(rec["payload"])
            result["submissions"] = submissions.get(sid, 0)
            results.append(result)
    return results, corruptions


def session_event_groups(store: EventStore, tolerant: bool = True) -> dict[str, list[dict]]:
    """Events grouped per session, each group in sequence order."""
    events, _ = store.read_events(tolerant=tolerant)
    groups: dict[str, list[dict]] = {}
    for rec in events:
        groups.setdefault(rec.get("session", ""), []).append(rec)
    return groups


def aggregate_usage(store: EventStore, tolerant: bool = True) -> UsageSummary:
    """Usage counts per mode and per (exercise, mode), recomputable from a
    full fold of the log at any time."""
    events, _ = store.read_events(tolerant=tolerant)
    session_mode: dict[str, str] = {}
    session_exercise: dict[str, str] = {}
    mode_exercises: dict[str, set[str]] = {}
    mode_sessions: dict[str, set[str]] = {}
    mode_submissions: dict[str, int] = {}
    cell_sessions: dict[tuple[str, str], set[str]] = {}
    cell_submissions: dict[tuple[str, str], int] = {}

    for rec in events:
        sid = rec.get("session", "")
        kind = rec["kind"]
        if kind == "sessionStarted":
            payload = rec.get("payload", {})
            mode = payload.get("mode", "formative")
            exercise = payload.get("exerciseId", "?")
            session_mode[sid] = mode
            session_exercise[sid] = exercise
            mode_exercises.setdefault(mode, set()).add(exercise)
            mode_sessions.setdefault(mode, set()).add(sid)
            cell_sessions.setdefault((exercise, mode), set()).add(sid)
        elif kind == "submissionMade":
            mode = session_mode.get(sid, "formative")
            exercise = session_exercise.get(sid, "?")
            mode_submissions[mode] = mode_submissions.get(mode, 0) + 1
            key = (exercise, mode)
            cell_submissions[key] = cell_submissions.get(key, 0) + 1

    summary = UsageSummary()
    for mode in set(mode_exercises) | set(mode_submissions):
        summary.per_mode[mode] = ModeUsage(
            exercises=len(mode_exercises.get(mode, ())),
            students=len(mode_sessions.get(mode, ())),
            submissions=mode_submissions.get(mode, 0),
        )
    for key in set(cell_sessions) | set(cell_submissions):
        summary.per_exercise[key] = ModeUsage(
            exercises=1,
            students=len(cell_sessions.get(key, ())),
            submissions=cell_submissions.get(key, 0),
        )
    return summary


MODE_COLUMNS = ("formative", "summative", "exam")


def usage_table(summary: UsageSummary) -> str:
    """Fixed-width text table: one row per mode, usage-figure columns."""
    header = f"{'Mode':<12}{'#Exercises':>12}{'#Students':>12}{'#Submissions':>14}"
    lines = [header, "-" * len(header)]
    for mode in MODE_COLUMNS:
        usage = summary.mode(mode)
        lines.append(
            f"{mode:<12}{usage.exercises:>12}{usage.students:>12}{usage.submissions:>14}")
    return "\n".join(lines)

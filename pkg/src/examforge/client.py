"""Backend client: one TCP connection per (session, exercise) with a pooled
lifecycle mirroring how students enter and leave exercises."""
from __future__ import annotations

import socket
import threading
import time
from pathlib import Path

from .protocol import (
    CloseRequest,
    ErrorReply,
    EvalRequest,
    OpenRequest,
    ValueReply,
    WorkspaceReply,
    decode_frame,
    encode_frame,
    value_from_wire,
)


class BackendUnavailable(Exception):
    """Transport-level failure; the session must re-instantiate."""


class WorkspaceClosed(Exception):
    pass


class BackendEvalError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class PoolCapacityError(Exception):
    pass


class WorkspaceConnection:
    """Open channel to one backend workspace.  Not thread-safe by itself; the
    pool serializes requests per connection."""

    def __init__(self, address: tuple[str, int], scratch_root: Path | None = None,
                 connection_id: str = ""):
        self.connection_id = connection_id
        self.address = address
        self.state = "closed"
        self.workspace_id = ""
        self.scratch_dir: Path | None = None
        self._scratch_root = scratch_root
        self._lock = threading.Lock()
        self.last_used = time.monotonic()
        try:
            self._sock = socket.create_connection(address, timeout=30)
            self._reader = self._sock.makefile("rb")
        except OSError as exc:
            raise BackendUnavailable(f"cannot reach backend at {address}: {exc}") from exc
        reply = self._request(OpenRequest())
        if not isinstance(reply, WorkspaceReply):
            raise BackendUnavailable(f"unexpected open reply: {reply!r}")
        self.workspace_id = reply.ws
        if scratch_root is not None:
            self.scratch_dir = Path(scratch_root) / reply.ws
        self.state = "open"

    def _request(self, frame):
        with self._lock:
            try:
                self._sock.sendall(encode_frame(frame))
                line = self._reader.readline()
            except OSError as exc:
                raise BackendUnavailable(f"backend transport failure: {exc}") from exc
        if not line:
            raise BackendUnavailable("backend closed the connection")
        return decode_frame(line)

    def eval(self, code: str):
        """Evaluate code in the workspace; assignments persist across calls."""
        if self.state != "open":
            raise WorkspaceClosed(f"workspace {self.workspace_id!r} is closed")
        self.last_used = time.monotonic()
        reply = self._request(EvalRequest(self.workspace_id, code))
        if isinstance(reply, ValueReply):
            return value_from_wire(reply.type, reply.value)
        if isinstance(reply, ErrorReply):
            if reply.kind == "no-such-workspace":
                raise WorkspaceClosed(reply.message)
            raise BackendEvalError(reply.kind, reply.message)
        raise BackendUnavailable(f"unexpected eval reply: {reply!r}")

    def close(self) -> None:
        """Close and delete the workspace; safe to call twice."""
        if self.state == "closed":
            return
        self.state = "closed"
        try:
            self._request(CloseRequest(self.workspace_id))
        except BackendUnavailable:
            pass
        finally:
            try:
                self._reader.close()
                self._sock.close()
            except OSError:
                pass


DEFAULT_CAPACITY = 256
DEFAULT_IDLE_TIMEOUT = 30 * 60.0


class BackendPool:
    """At most one live workspace connection per (session, exercise) key."""

    def __init__(self, address: tuple[str, int], capacity: int = DEFAULT_CAPACITY,
                 idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                 scratch_root: Path | None = None):
        self.address = address
        self.capacity = capacity
        self.idle_timeout = idle_timeout
        self.scratch_root = scratch_root
        self._conns: dict[tuple[str, str], WorkspaceConnection] = {}
        self._lock = threading.Lock()

    def acquire(self, session_id: str, exercise_id: str) -> WorkspaceConnection:
        """Return the existing open connection for the key, or open a new one."""
        key = (session_id, exercise_id)
        with self._lock:
            conn = self._conns.get(key)
            if conn is not None and conn.state == "open":
                conn.last_used = time.monotonic()
                return conn
            if conn is not None:
                del self._conns[key]
            self._sweep_locked()
            if len(self._conns) >= self.capacity:
                raise PoolCapacityError(
                    f"pool capacity {self.capacity} exhausted and no idle connection to evict")
            conn = WorkspaceConnection(
                self.address, scratch_root=self.scratch_root,
                connection_id=f"{session_id}/{exercise_id}")
            self._conns[key] = conn
            return conn

    def close(self, session_id: str, exercise_id: str) -> None:
        with self._lock:
            conn = self._conns.pop((session_id, exercise_id), None)
        if conn is not None:
            conn.close()

    def close_all(self) -> None:
        with self._lock:
            conns = list(self._conns.values())
            self._conns.clear()
        for conn in conns:
            conn.close()

    def _sweep_locked(self) -> None:
        now = time.monotonic()
        stale = [k for k, c in self._conns.items()
                 if now - c.last_used > self.idle_timeout or c.state != "open"]
        for key in stale:
            conn = self._conns.pop(key)
            conn.close()

    def __len__(self) -> int:
        with self._lock:
            return len(self._conns)

"""Reference evaluation backend: a line-protocol TCP server whose language is
the expression language plus `name := expr` assignment and plot builtins.

Each workspace owns a persistent binding environment, a seeded RNG, and an
on-disk scratch directory; closing a workspace deletes all three.  Connections
are handled concurrently, commands on one connection strictly in order.
"""
from __future__ import annotations

import logging
import re
import shutil
import socketserver
import threading
import uuid
from pathlib import Path
from random import Random

from . import expr
from .expr import EvalError, ExprSyntaxError, ImageValue
from .protocol import (
    CloseRequest,
    ErrorReply,
    EvalRequest,
    OpenRequest,
    ProtocolError,
    ValueReply,
    WorkspaceReply,
    decode_frame,
    encode_frame,
    value_to_wire,
)

log = logging.getLogger(__name__)

_ASSIGN_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:=(.*)$", re.DOTALL)


def svg_histogram(values: list[float], bins: int = 10, width: int = 480, height: int = 320) -> bytes:
    """Render a deterministic SVG histogram of the values (no plotting deps)."""
    lo, hi = min(values), max(values)
    if hi == lo:
        hi = lo + 1.0
    span = hi - lo
    counts = [0] * bins
    for v in values:
        idx = min(int((v - lo) / span * bins), bins - 1)
        counts[idx] += 1
    peak = max(counts)
    margin = 30
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    bar_w = plot_w / bins
    for i, c in enumerate(counts):
        bar_h = 0 if peak == 0 else c / peak * plot_h
        x = margin + i * bar_w
        y = margin + plot_h - bar_h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{bar_h:.2f}" '
            f'fill="#4878a8" stroke="white"/>'
        )
    axis_y = margin + plot_h
    parts.append(
        f'<line x1="{margin}" y1="{axis_y}" x2="{margin + plot_w}" y2="{axis_y}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{margin}" y="{height - 8}" font-size="11" font-family="sans-serif">{lo:.2f}</text>'
    )
    parts.append(
        f'<text x="{margin + plot_w - 30}" y="{height - 8}" font-size="11" '
        f'font-family="sans-serif">{hi:.2f}</text>'
    )
    parts.append("</svg>")
    return "".join(parts).encode("utf-8")


class Workspace:
    """Persistent per-connection evaluation environment."""

    def __init__(self, ws_id: str, scratch_dir: Path, seed: int):
        self.id = ws_id
        self.scratch_dir = scratch_dir
        self.bindings: dict[str, object] = {}
        self.rng = Random(seed)
        self._plot_count = 0
        scratch_dir.mkdir(parents=True, exist_ok=True)

    def evaluate(self, code: str):
        m = _ASSIGN_RE.match(code)
        if m:
            name, body = m.group(1), m.group(2)
            value = self._eval_expression(body)
            self.bindings[name] = value
            return value
        return self._eval_expression(code)

    def _eval_expression(self, text: str):
        tree = expr.parse(text)
        return expr.evaluate(
            tree,
            self.bindings,
            rng=self.rng,
            functions={"setseed": self._setseed, "plot_histogram": self._plot_histogram},
        )

    def _setseed(self, seed) -> int:
        n = int(seed)
        self.rng = Random(n)
        return n

    def _plot_histogram(self, values) -> ImageValue:
        if not isinstance(values, list) or not values:
            raise EvalError("domain", "plot_histogram requires a non-empty vector")
        data = svg_histogram([float(v) for v in values])
        self._plot_count += 1
        (self.scratch_dir / f"plot_{self._plot_count}.svg").write_bytes(data)
        return ImageValue("image/svg+xml", data)

    def destroy(self) -> None:
        self.bindings.clear()
        shutil.rmtree(self.scratch_dir, ignore_errors=True)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        server: BackendServer = self.server  # type: ignore[assignment]
        workspaces: dict[str, Workspace] = {}
        try:
            for raw in self.rfile:
                reply = self._process(server, workspaces, raw)
                try:
                    self.wfile.write(encode_frame(reply))
                    self.wfile.flush()
                except (OSError, ValueError):
                    break
        except (ConnectionError, OSError):
            pass
        finally:
            # a dropped connection abandons the student's workspaces
            for ws in workspaces.values():
                ws.destroy()
            workspaces.clear()

    def _process(self, server: "BackendServer", workspaces: dict[str, Workspace], raw: bytes):
        try:
            frame = decode_frame(raw)
        except ProtocolError as exc:
            return ErrorReply("malformed", str(exc))

        if isinstance(frame, OpenRequest):
            ws = server.create_workspace()
            workspaces[ws.id] = ws
            return WorkspaceReply(ws.id)

        if isinstance(frame, EvalRequest):
            ws = workspaces.get(frame.ws)
            if ws is None:
                return ErrorReply("no-such-workspace", f"workspace {frame.ws!r} is not open")
            try:
                value = ws.evaluate(frame.code)
            except ExprSyntaxError as exc:
                return ErrorReply("parse", str(exc))
            except EvalError as exc:
                kind = exc.kind if exc.kind in ("domain", "unbound") else "domain"
                return ErrorReply(kind, str(exc))
            except Exception as exc:  # author bugs must not kill the connection
                log.exception("unexpected evaluation failure")
                return ErrorReply("domain", f"evaluation failed: {exc}")
            try:
                type_tag, payload = value_to_wire(value)
            except ProtocolError as exc:
                return ErrorReply("domain", str(exc))
            return ValueReply(type_tag, payload)

        if isinstance(frame, CloseRequest):
            ws = workspaces.pop(frame.ws, None)
            if ws is not None:
                ws.destroy()
            # close is idempotent: closing an unknown workspace succeeds
            return WorkspaceReply(frame.ws)

        return ErrorReply("malformed", "request frame expected")


class BackendServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, listen: tuple[str, int], scratch_root: Path, seed: int | None = None):
        super().__init__(listen, _Handler)
        self.scratch_root = Path(scratch_root)
        self.scratch_root.mkdir(parents=True, exist_ok=True)
        self._seed = seed
        self._counter = 0
        self._lock = threading.Lock()

    def create_workspace(self) -> Workspace:
        with self._lock:
            self._counter += 1
            n = self._counter
        ws_id = f"ws-{n}-{uuid.uuid4().hex[:8]}"
        if self._seed is None:
            ws_seed = uuid.uuid4().int & 0xFFFFFFFF
        else:
            ws_seed = (self._seed * 1_000_003 + n) & 0xFFFFFFFFFFFF
        return Workspace(ws_id, self.scratch_root / ws_id, ws_seed)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return str(host), int(port)


class EmbeddedBackend:
    """Backend server on an ephemeral localhost port, for tests and the CLI."""

    def __init__(self, scratch_root: Path | None = None, seed: int | None = None):
        import tempfile

        if scratch_root is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="examforge-ws-")
            scratch_root = Path(self._tmp.name)
        else:
            self._tmp = None
        self.server = BackendServer(("127.0.0.1", 0), scratch_root, seed=seed)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self.server.address

    @property
    def scratch_root(self) -> Path:
        return self.server.scratch_root

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)
        if self._tmp is not None:
            self._tmp.cleanup()

    def __enter__(self) -> "EmbeddedBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_backend(listen: tuple[str, int], scratch_root: Path, seed: int | None = None) -> None:
    """Run the backend until interrupted (the CLI entry point)."""
    with BackendServer(listen, scratch_root, seed=seed) as server:
        host, port = server.address
        log.info("backend listening on %s:%s", host, port)
        server.serve_forever()

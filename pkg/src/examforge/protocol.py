"""Wire protocol for the evaluation backend: UTF-8 JSON objects, one per line.

Requests:  {"op":"open"} | {"op":"eval","ws":id,"code":text} | {"op":"close","ws":id}
Replies:   {"ok":true,"ws":id}
         | {"ok":true,"type":kind,"value":...}
         | {"ok":false,"kind":kind,"message":text}
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from typing import Union

from .expr import ImageValue


class ProtocolError(Exception):
    """Malformed frame bytes or an out-of-contract frame object."""


@dataclass(frozen=True)
class OpenRequest:
    pass


@dataclass(frozen=True)
class EvalRequest:
    ws: str
    code: str


@dataclass(frozen=True)
class CloseRequest:
    ws: str


@dataclass(frozen=True)
class WorkspaceReply:
    ws: str


@dataclass(frozen=True)
class ValueReply:
    type: str  # number | integer | boolean | string | vector | image
    value: object


@dataclass(frozen=True)
class ErrorReply:
    kind: str  # parse | domain | unbound | no-such-workspace | malformed
    message: str


Frame = Union[OpenRequest, EvalRequest, CloseRequest, WorkspaceReply, ValueReply, ErrorReply]

ERROR_KINDS = ("parse", "domain", "unbound", "no-such-workspace", "malformed")
VALUE_TYPES = ("number", "integer", "boolean", "string", "vector", "image")


def value_to_wire(value) -> tuple[str, object]:
    """Map a runtime value onto its (type tag, JSON payload) wire form."""
    if isinstance(value, bool):
        return "boolean", value
    if isinstance(value, int):
        return "integer", value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ProtocolError("non-finite number cannot be sent")
        return "number", value
    if isinstance(value, str):
        return "string", value
    if isinstance(value, list):
        return "vector", [float(x) for x in value]
    if isinstance(value, ImageValue):
        return "image", {
            "media": value.media_type,
            "data": base64.b64encode(value.data).decode("ascii"),
        }
    raise ProtocolError(f"value of type {type(value).__name__} is not wire-encodable")


def value_from_wire(type_tag: str, payload):
    if type_tag == "boolean":
        return bool(payload)
    if type_tag == "integer":
        return int(payload)
    if type_tag == "number":
        return float(payload)
    if type_tag == "string":
        return str(payload)
    if type_tag == "vector":
        return [float(x) for x in payload]
    if type_tag == "image":
        return ImageValue(payload["media"], base64.b64decode(payload["data"]))
    raise ProtocolError(f"unknown value type tag {type_tag!r}")


def encode_frame(frame: Frame) -> bytes:
    """Serialize one frame as a newline-terminated UTF-8 JSON line."""
    if isinstance(frame, OpenRequest):
        obj = {"op": "open"}
    elif isinstance(frame, EvalRequest):
        obj = {"op": "eval", "ws": frame.ws, "code": frame.code}
    elif isinstance(frame, CloseRequest):
        obj = {"op": "close", "ws": frame.ws}
    elif isinstance(frame, WorkspaceReply):
        obj = {"ok": True, "ws": frame.ws}
    elif isinstance(frame, ValueReply):
        if frame.type not in VALUE_TYPES:
            raise ProtocolError(f"bad value type {frame.type!r}")
        obj = {"ok": True, "type": frame.type, "value": frame.value}
    elif isinstance(frame, ErrorReply):
        if frame.kind not in ERROR_KINDS:
            raise ProtocolError(f"bad error kind {frame.kind!r}")
        obj = {"ok": False, "kind": frame.kind, "message": frame.message}
    else:
        raise ProtocolError(f"not a frame: {frame!r}")
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"


def decode_frame(line: bytes) -> Frame:
    """Parse one frame line (the trailing newline may be present or stripped)."""
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("frame must be a JSON object")

    if "op" in obj:
        op = obj["op"]
        if op == "open":
            return OpenRequest()
        if op == "eval":
            try:
                return EvalRequest(ws=str(obj["ws"]), code=str(obj["code"]))
            except KeyError as exc:
                raise ProtocolError(f"eval frame missing {exc}") from exc
        if op == "close":
            try:
                return CloseRequest(ws=str(obj["ws"]))
            except KeyError as exc:
                raise ProtocolError(f"close frame missing {exc}") from exc
        raise ProtocolError(f"unknown op {op!r}")

    if "ok" in obj:
        if obj["ok"] is True:
            if "ws" in obj:
                return WorkspaceReply(ws=str(obj["ws"]))
            if "type" in obj:
                if obj["type"] not in VALUE_TYPES:
                    raise ProtocolError(f"unknown value type {obj['type']!r}")
                if "value" not in obj:
                    raise ProtocolError("value reply missing 'value'")
                return ValueReply(type=obj["type"], value=obj["value"])
            raise ProtocolError("ok reply missing 'ws' or 'type'")
        if obj["ok"] is False:
            kind = obj.get("kind")
            if kind not in ERROR_KINDS:
                raise ProtocolError(f"unknown error kind {kind!r}")
            return ErrorReply(kind=kind, message=str(obj.get("message", "")))
        raise ProtocolError("'ok' must be a boolean")

    raise ProtocolError("frame is neither request nor reply")

"""JSON encoding of the HTTP protocol. Bodies are compact UTF-8 JSON with
keys in schema order, so they can be compared byte-for-byte."""

from __future__ import annotations

import json
import math

from ..errors import ProtocolError, RequestError
from .base import BackendResponse, GenerateRequest, ImageRef, LogprobsRequest

LOGPROBS_PATH = "/v1/logprobs"
GENERATE_PATH = "/v1/generate"
HEALTH_PATH = "/v1/health"


def dumps(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _load_object(body: bytes, what: str) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"{what} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"{what} must be a JSON object")
    return obj


def _field(obj: dict, key: str, kind: type, what: str):
    value = obj.get(key)
    if not isinstance(value, kind) or (kind is not bool and isinstance(value, bool)):
        raise ProtocolError(f"{what}: field {key!r} missing or not a {kind.__name__}")
    return value


def encode_logprobs_request(req: LogprobsRequest) -> bytes:
    return dumps(req.to_wire())


def encode_generate_request(req: GenerateRequest) -> bytes:
    return dumps(req.to_wire())


def decode_logprobs_request(body: bytes) -> LogprobsRequest:
    try:
        obj = _load_object(body, "logprobs request")
        return LogprobsRequest(
            image=ImageRef.from_wire(obj.get("image")),
            prompt=_field(obj, "prompt", str, "logprobs request"),
            continuation=_field(obj, "continuation", str, "logprobs request"),
            echo_tokens=bool(obj.get("echo_tokens", True)),
        )
    except (ProtocolError, ValueError) as exc:
        raise RequestError(str(exc)) from exc


def decode_generate_request(body: bytes) -> GenerateRequest:
    try:
        obj = _load_object(body, "generate request")
        temperature = obj.get("temperature", 0.0)
        if not isinstance(temperature, (int, float)) or isinstance(temperature, bool):
            raise ProtocolError("generate request: temperature must be a number")
        return GenerateRequest(
            image=ImageRef.from_wire(obj.get("image")),
            prompt=_field(obj, "prompt", str, "generate request"),
            max_tokens=_field(obj, "max_tokens", int, "generate request"),
            temperature=float(temperature),
        )
    except (ProtocolError, ValueError) as exc:
        raise RequestError(str(exc)) from exc


def encode_logprobs_reply(resp: BackendResponse) -> bytes:
    return dumps({"tokens": resp.tokens, "logprobs": resp.logprobs, "backend": resp.backend})


def encode_generate_reply(resp: BackendResponse) -> bytes:
    return dumps({"text": resp.text, "backend": resp.backend})


def decode_logprobs_reply(body: bytes) -> BackendResponse:
    obj = _load_object(body, "logprobs reply")
    tokens = _field(obj, "tokens", list, "logprobs reply")
    values = _field(obj, "logprobs", list, "logprobs reply")
    backend = _field(obj, "backend", str, "logprobs reply")
    if not all(isinstance(t, str) for t in tokens):
        raise ProtocolError("logprobs reply: tokens must be strings")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise ProtocolError("logprobs reply: logprobs must be numbers")
    if len(tokens) != len(values):
        raise ProtocolError(
            f"tokenization mismatch: {len(tokens)} tokens but {len(values)} logprobs"
        )
    if not values:
        raise ProtocolError("logprobs reply carries no tokens")
    values = [float(v) for v in values]
    if not all(math.isfinite(v) and v <= 0.0 for v in values):
        raise ProtocolError("logprobs must be finite and <= 0")
    return BackendResponse(backend=backend, tokens=list(tokens), logprobs=values)


def decode_generate_reply(body: bytes) -> BackendResponse:
    obj = _load_object(body, "generate reply")
    text = _field(obj, "text", str, "generate reply")
    backend = _field(obj, "backend", str, "generate reply")
    return BackendResponse(backend=backend, text=text)


def decode_health_reply(body: bytes) -> tuple[str, str]:
    obj = _load_object(body, "health reply")
    status = _field(obj, "status", str, "health reply")
    backend = _field(obj, "backend", str, "health reply")
    return status, backend

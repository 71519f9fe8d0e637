"""HTTP server exposing any :class:`Backend` over the JSON protocol, plus a
scripted backend used as a deterministic stub in tests and demos."""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from ..errors import BackendError, EmptyOutputError, LingoptError, NetworkError, RequestError
from . import wire
from .base import Backend, BackendResponse, GenerateRequest, HealthStatus, LogprobsRequest

log = logging.getLogger(__name__)


class ScriptedBackend(Backend):
    """Replies from a fixture script instead of a model.

    Script keys (all optional)::

        backend          identifier reported in replies (default "stub")
        generate         list of rules {"prompt"| "contains", "image", "text"};
                         first match wins, a list "text" is replayed in order
        default_text     reply when no generate rule matches (default "",
                         which surfaces as an empty-output error)
        logprobs         list of rules {"continuation", "prompt_contains",
                         "logprobs", "tokens"}
        default_logprob  per-token value for unmatched continuations (-1.0)
        fail             {"generate": n, "logprobs": n}: first n calls fail
                         with a retryable error
        delay_ms         sleep before every reply
    """

    def __init__(self, script: Optional[dict] = None):
        self.script = dict(script or {})
        self.name = self.script.get("backend", "stub")
        self._lock = threading.Lock()
        self._hits: dict[int, int] = {}
        self._fail_left = dict(self.script.get("fail", {}))

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _maybe_fail(self, op: str) -> None:
        with self._lock:
            left = self._fail_left.get(op, 0)
            if left > 0:
                self._fail_left[op] = left - 1
                raise NetworkError(f"scripted {op} failure")

    def _pause(self) -> None:
        delay = self.script.get("delay_ms", 0)
        if delay:
            time.sleep(delay / 1000.0)

    def generate(self, req: GenerateRequest) -> BackendResponse:
        self._maybe_fail("generate")
        self._pause()
        text = self.script.get("default_text", "")
        for i, rule in enumerate(self.script.get("generate", [])):
            if "prompt" in rule and rule["prompt"] != req.prompt:
                continue
            if "contains" in rule and rule["contains"] not in req.prompt:
                continue
            if "image" in rule and bool(rule["image"]) != (req.image is not None):
                continue
            text = rule["text"]
            if isinstance(text, list):
                with self._lock:
                    n = self._hits.get(i, 0)
                    self._hits[i] = n + 1
                text = text[min(n, len(text) - 1)]
            break
        # server-side truncation to max_tokens
        text = " ".join(text.split()[: req.max_tokens])
        if not text:
            raise EmptyOutputError("script has no text for this prompt")
        return BackendResponse(backend=self.name, text=text)

    def logprobs(self, req: LogprobsRequest) -> BackendResponse:
        self._maybe_fail("logprobs")
        self._pause()
        for rule in self.script.get("logprobs", []):
            if "continuation" in rule and rule["continuation"] != req.continuation:
                continue
            if "prompt_contains" in rule and rule["prompt_contains"] not in req.prompt:
                continue
            values = [float(v) for v in rule["logprobs"]]
            tokens = rule.get("tokens") or req.continuation.split()
            return BackendResponse(backend=self.name, tokens=list(tokens), logprobs=values)
        tokens = req.continuation.split()
        value = float(self.script.get("default_logprob", -1.0))
        return BackendResponse(backend=self.name, tokens=tokens, logprobs=[value] * len(tokens))

    def healthcheck(self) -> HealthStatus:
        return HealthStatus(True, self.name)


@dataclass(frozen=True)
class RecordedRequest:
    method: str
    path: str
    body: bytes


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("stub server: " + fmt, *args)

    def _send(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._send(status, wire.dumps({"error": message}))

    def do_GET(self):
        self.server.owner._record("GET", self.path, b"")
        if self.path != wire.HEALTH_PATH:
            return self._error(404, f"no route {self.path}")
        status = self.server.owner.backend.healthcheck()
        self._send(200, wire.dumps({"status": status.status, "backend": status.backend}))

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        self.server.owner._record("POST", self.path, body)
        backend = self.server.owner.backend
        try:
            if self.path == wire.LOGPROBS_PATH:
                resp = backend.logprobs(wire.decode_logprobs_request(body))
                return self._send(200, wire.encode_logprobs_reply(resp))
            if self.path == wire.GENERATE_PATH:
                req = wire.decode_generate_request(body)
                try:
                    resp = backend.generate(req)
                except EmptyOutputError:
                    resp = BackendResponse(backend=backend.name, text="")
                return self._send(200, wire.encode_generate_reply(resp))
            return self._error(404, f"no route {self.path}")
        except RequestError as exc:
            return self._error(400, str(exc))
        except NetworkError as exc:
            return self._error(503, str(exc))
        except BackendError as exc:
            return self._error(502, str(exc))
        except (LingoptError, ValueError) as exc:
            return self._error(500, str(exc))


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    owner: "BackendServer"


class BackendServer:
    """Serve ``backend`` on ``host:port`` (port 0 picks a free one).

    Every received request is recorded in :attr:`requests` for inspection.
    """

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self._httpd = _Server((host, port), _Handler)
        self._httpd.owner = self
        self._thread: Optional[threading.Thread] = None
        self._lock = threading.Lock()
        self.requests: list[RecordedRequest] = []

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _record(self, method: str, path: str, body: bytes) -> None:
        with self._lock:
            self.requests.append(RecordedRequest(method, path, body))

    def start(self) -> "BackendServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "BackendServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

"""Client for remote inference servers speaking the lingopt JSON protocol."""

from __future__ import annotations

import logging
import os
import time
from typing import Callable, Optional

import httpx

from ..errors import EmptyOutputError, NetworkError, ProtocolError, RequestError
from . import wire
from .base import Backend, BackendResponse, GenerateRequest, HealthStatus, LogprobsRequest

log = logging.getLogger(__name__)

ENV_URL = "LINGOPT_BACKEND_URL"
ENV_TIMEOUT = "LINGOPT_BACKEND_TIMEOUT_MS"
DEFAULT_TIMEOUT_MS = 30_000


class HttpBackend(Backend):
    """Thread-safe; one connection pool shared by all callers.

    Transport errors and 5xx replies are retried up to ``attempts`` times in
    total with exponential backoff; 4xx replies are never retried.
    """

    def __init__(
        self,
        url: str,
        timeout_ms: Optional[float] = None,
        token: Optional[str] = None,
        attempts: int = 3,
        backoff_s: float = 0.2,
        backoff_factor: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        if timeout_ms is None:
            timeout_ms = float(os.environ.get(ENV_TIMEOUT, DEFAULT_TIMEOUT_MS))
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.url = url.rstrip("/")
        self.name = f"http:{self.url}"
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=self.url, timeout=timeout_ms / 1000.0, headers=headers, transport=transport
        )

    @classmethod
    def from_env(cls, **kwargs) -> "HttpBackend":
        url = os.environ.get(ENV_URL)
        if not url:
            raise RequestError(f"{ENV_URL} is not set")
        return cls(url, **kwargs)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, body: bytes) -> bytes:
        delay = self.backoff_s
        for attempt in range(1, self.attempts + 1):
            try:
                resp = self._client.post(path, content=body)
            except httpx.TransportError as exc:
                failure = f"transport error on {path}: {exc}"
            else:
                if resp.status_code < 400:
                    return resp.content
                if resp.status_code < 500:
                    raise RequestError(f"{resp.status_code} from {path}: {_server_message(resp)}")
                failure = f"{resp.status_code} from {path}: {_server_message(resp)}"
            if attempt < self.attempts:
                log.warning("%s (attempt %d/%d), retrying", failure, attempt, self.attempts)
                self._sleep(delay)
                delay *= self.backoff_factor
        raise NetworkError(failure)

    def logprobs(self, req: LogprobsRequest) -> BackendResponse:
        start = time.perf_counter()
        resp = wire.decode_logprobs_reply(self._post(wire.LOGPROBS_PATH, wire.encode_logprobs_request(req)))
        resp.latency_ms = (time.perf_counter() - start) * 1000.0
        return resp

    def generate(self, req: GenerateRequest) -> BackendResponse:
        start = time.perf_counter()
        resp = wire.decode_generate_reply(self._post(wire.GENERATE_PATH, wire.encode_generate_request(req)))
        resp.latency_ms = (time.perf_counter() - start) * 1000.0
        if len(resp.text.split()) > req.max_tokens:
            raise ProtocolError(
                f"server returned {len(resp.text.split())} tokens for max_tokens={req.max_tokens}"
            )
        if not resp.text.strip():
            raise EmptyOutputError("server returned an empty generation")
        return resp

    def healthcheck(self) -> HealthStatus:
        try:
            resp = self._client.get(wire.HEALTH_PATH)
        except httpx.TransportError as exc:
            return HealthStatus(False, self.name, str(exc))
        if resp.status_code >= 500:
            return HealthStatus(False, self.name, f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise RequestError(f"{resp.status_code} from {wire.HEALTH_PATH}: {_server_message(resp)}")
        status, backend = wire.decode_health_reply(resp.content)
        if status != "ok":
            return HealthStatus(False, backend, f"server reports status {status!r}")
        return HealthStatus(True, backend)


def _server_message(resp: httpx.Response) -> str:
    try:
        obj = resp.json()
    except ValueError:
        return resp.text.strip()[:200]
    if isinstance(obj, dict) and isinstance(obj.get("error"), str):
        return obj["error"]
    return resp.text.strip()[:200]

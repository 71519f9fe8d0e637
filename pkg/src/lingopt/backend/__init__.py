from .base import (
    Backend,
    BackendResponse,
    GenerateRequest,
    HealthStatus,
    ImageRef,
    LogprobsRequest,
    as_image_ref,
)
from .http import HttpBackend
from .server import BackendServer, ScriptedBackend
from .toy import ToyBackend

__all__ = [
    "Backend",
    "BackendResponse",
    "BackendServer",
    "GenerateRequest",
    "HealthStatus",
    "HttpBackend",
    "ImageRef",
    "LogprobsRequest",
    "ScriptedBackend",
    "ToyBackend",
    "as_image_ref",
    "open_backend",
]


def open_backend(spec: str) -> Backend:
    """``toy:<checkpoint>`` or ``http:<url>`` (``http://...`` also accepted)."""
    kind, sep, rest = spec.partition(":")
    if kind == "toy" and sep and rest:
        return ToyBackend.from_checkpoint(rest)
    if kind in ("http", "https") and sep and rest:
        if rest.startswith("//"):
            url = spec
        elif rest.startswith(("http://", "https://")):
            url = rest
        else:
            url = f"http://{rest}"
        return HttpBackend(url)
    raise ValueError(f"backend must be toy:<checkpoint> or http:<url>, got {spec!r}")

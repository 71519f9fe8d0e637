"""Backend capability: score continuations and generate text given an image."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional, Union

from ..errors import PreconditionError, ProtocolError
from ..toymodel.image import ImageGrid


@dataclass(frozen=True)
class ImageRef:
    """Image as carried on the wire: inline grid payload or opaque reference."""

    kind: str
    value: str

    def __post_init__(self):
        if self.kind not in ("inline", "ref"):
            raise PreconditionError(f"image kind must be 'inline' or 'ref', got {self.kind!r}")
        if not isinstance(self.value, str) or not self.value:
            raise PreconditionError("image value must be a nonempty string")

    @classmethod
    def inline(cls, grid: ImageGrid) -> "ImageRef":
        return cls("inline", grid.to_base64())

    @classmethod
    def ref(cls, name: str) -> "ImageRef":
        return cls("ref", name)

    def to_wire(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_wire(cls, obj) -> Optional["ImageRef"]:
        if obj is None:
            return None
        if not isinstance(obj, dict) or set(obj) != {"kind", "value"}:
            raise ProtocolError(f"malformed image object: {obj!r}")
        return cls(obj["kind"], obj["value"])


ImageLike = Union[ImageRef, ImageGrid, str, None]


def as_image_ref(image: ImageLike) -> Optional[ImageRef]:
    """Accept a grid, a ref, a bare reference string, or None."""
    if image is None or isinstance(image, ImageRef):
        return image
    if isinstance(image, ImageGrid):
        return ImageRef.inline(image)
    if isinstance(image, str):
        return ImageRef.ref(image)
    raise TypeError(f"cannot use {type(image).__name__} as an image")


@dataclass(frozen=True)
class LogprobsRequest:
    image: Optional[ImageRef]
    prompt: str
    continuation: str
    echo_tokens: bool = True

    def __post_init__(self):
        if not self.continuation or not self.continuation.strip():
            raise PreconditionError("continuation must be nonempty")

    def to_wire(self) -> dict:
        return {
            "image": self.image.to_wire() if self.image else None,
            "prompt": self.prompt,
            "continuation": self.continuation,
            "echo_tokens": self.echo_tokens,
        }


@dataclass(frozen=True)
class GenerateRequest:
    image: Optional[ImageRef]
    prompt: str
    max_tokens: int = 32
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise PreconditionError("max_tokens must be >= 1")
        if not self.temperature >= 0:
            raise PreconditionError("temperature must be >= 0")

    def to_wire(self) -> dict:
        return {
            "image": self.image.to_wire() if self.image else None,
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }


@dataclass
class BackendResponse:
    backend: str
    latency_ms: float = 0.0
    tokens: Optional[list[str]] = None
    logprobs: Optional[list[float]] = None
    text: Optional[str] = None


@dataclass(frozen=True)
class HealthStatus:
    ok: bool
    backend: str = ""
    detail: str = field(default="", compare=False)

    @property
    def status(self) -> str:
        return "ok" if self.ok else "unavailable"


class Backend(abc.ABC):
    """A handle shareable across threads; every call is independent."""

    name: str = "backend"

    @abc.abstractmethod
    def logprobs(self, req: LogprobsRequest) -> BackendResponse: ...

    @abc.abstractmethod
    def generate(self, req: GenerateRequest) -> BackendResponse: ...

    @abc.abstractmethod
    def healthcheck(self) -> HealthStatus: ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

from __future__ import annotations

import binascii
import time
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from ..errors import CheckpointError, EmptyOutputError, LingoptError, RequestError, ShapeError
from ..toymodel import checkpoint
from ..toymodel.image import ImageGrid
from ..toymodel.model import ToyModelParams, forward_logprobs, generate
from ..toymodel.vocab import tokenize
from .base import Backend, BackendResponse, GenerateRequest, HealthStatus, ImageRef, LogprobsRequest


class ToyBackend(Backend):
    """In-process backend over the toy model.

    Reference images resolve through ``images`` first, then as grid files on
    disk (when ``resolve_paths`` is set).
    """

    def __init__(
        self,
        params: ToyModelParams,
        images: Optional[Mapping[str, ImageGrid]] = None,
        resolve_paths: bool = True,
        name: str = "toy",
        seed: int = 7,
    ):
        self.params = params
        self.images = dict(images or {})
        self.resolve_paths = resolve_paths
        self.name = name
        self.seed = seed

    @classmethod
    def from_checkpoint(cls, path, **kwargs) -> "ToyBackend":
        return cls(checkpoint.load(path), **kwargs)

    def resolve_image(self, image: Optional[ImageRef]) -> Optional[ImageGrid]:
        if image is None:
            return None
        if image.kind == "inline":
            try:
                return ImageGrid.from_base64(image.value)
            except (binascii.Error, ValueError, CheckpointError, ShapeError) as exc:
                raise RequestError(f"cannot decode inline image: {exc}") from exc
        if image.value in self.images:
            return self.images[image.value]
        if self.resolve_paths:
            try:
                return ImageGrid.load(Path(image.value))
            except (OSError, CheckpointError, ShapeError, ValueError) as exc:
                raise RequestError(f"cannot resolve image reference {image.value!r}: {exc}") from exc
        raise RequestError(f"unknown image reference {image.value!r}")

    def logprobs(self, req: LogprobsRequest) -> BackendResponse:
        start = time.perf_counter()
        img = self.resolve_image(req.image)
        vocab = self.params.vocab
        tokens = tokenize(req.continuation)
        if not tokens:
            raise RequestError("continuation has no tokens")
        try:
            values = forward_logprobs(
                img, vocab.encode(req.prompt), [vocab.id_of(t) for t in tokens], self.params
            )
        except (LingoptError, ValueError) as exc:
            raise RequestError(str(exc)) from exc
        return BackendResponse(
            backend=self.name,
            latency_ms=(time.perf_counter() - start) * 1000.0,
            tokens=tokens,
            logprobs=[float(v) for v in values],
        )

    def generate(self, req: GenerateRequest) -> BackendResponse:
        start = time.perf_counter()
        img = self.resolve_image(req.image)
        vocab = self.params.vocab
        rng = np.random.default_rng(self.seed) if req.temperature > 0 else None
        try:
            ids = generate(
                img, vocab.encode(req.prompt), req.max_tokens, self.params, req.temperature, rng
            )
        except (LingoptError, ValueError) as exc:
            raise RequestError(str(exc)) from exc
        text = vocab.decode(ids)
        if not text:
            raise EmptyOutputError("toy model produced no tokens")
        return BackendResponse(
            backend=self.name, latency_ms=(time.perf_counter() - start) * 1000.0, text=text
        )

    def healthcheck(self) -> HealthStatus:
        return HealthStatus(True, self.name)

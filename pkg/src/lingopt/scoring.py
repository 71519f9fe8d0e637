"""Instruction Alignment Score (IAS).

The IAS of an instruction is the mean negative log-probability (natural log)
of its tokens, scored as the continuation of a fixed prompt that asks the
model, given the image, for the most appropriate instruction. Lower is
better.
"""

from __future__ import annotations

import enum
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .backend.base import Backend, ImageLike, LogprobsRequest, as_image_ref
from .errors import PreconditionError, ProtocolError

IAS_TEMPLATE = "<Image>Based on the image given, the most appropriate instruction should be: {}"
IAS_PREFIX = IAS_TEMPLATE[: IAS_TEMPLATE.index("{}")]


class InstructionKind(str, enum.Enum):
    INITIAL = "initial"
    REWRITTEN = "rewritten"
    OPTIMIZED = "optimized"


@dataclass(frozen=True)
class Instruction:
    text: str
    kind: InstructionKind = InstructionKind.INITIAL
    ias: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise PreconditionError("instruction text must be nonempty")
        object.__setattr__(self, "kind", InstructionKind(self.kind))
        if self.ias is not None and not (math.isfinite(self.ias) and self.ias >= 0):
            raise PreconditionError(f"IAS must be finite and >= 0, got {self.ias}")

    def with_ias(self, ias: float) -> "Instruction":
        return replace(self, ias=ias)

    def to_dict(self) -> dict:
        return {"text": self.text, "kind": self.kind.value, "ias": self.ias}


@dataclass(frozen=True)
class ScoredPair:
    initial: Instruction
    rewritten: Instruction

    def __post_init__(self):
        if self.initial.ias is None or self.rewritten.ias is None:
            raise PreconditionError("both instructions of a scored pair need an IAS")


def normalize_whitespace(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def ias_prompt(instruction_text: str) -> str:
    """The full scoring prompt; the instruction is inserted verbatim."""
    if not instruction_text or not instruction_text.strip():
        raise PreconditionError("instruction must be nonempty")
    return IAS_PREFIX + instruction_text


def continuation_nlls(backend: Backend, image: ImageLike, prompt: str, continuation: str) -> list[float]:
    """Per-token ``-log P(t_i | image, prompt, t_<i)`` of ``continuation``."""
    resp = backend.logprobs(LogprobsRequest(as_image_ref(image), prompt, continuation))
    if resp.logprobs is None or resp.tokens is None or len(resp.tokens) != len(resp.logprobs):
        raise ProtocolError("logprob reply does not pair one value with each token")
    if not resp.logprobs:
        raise ProtocolError("logprob reply is empty")
    return [-lp for lp in resp.logprobs]


def mean_nll(backend: Backend, image: ImageLike, prompt: str, continuation: str) -> float:
    nlls = continuation_nlls(backend, image, prompt, continuation)
    return math.fsum(nlls) / len(nlls)


def compute_ias(backend: Backend, image: ImageLike, instruction) -> float:
    """IAS of ``instruction`` (an :class:`Instruction` or plain string).

    Only the instruction tokens are scored, never the template prefix.
    Whitespace is normalized first, so trailing or doubled spaces do not move
    the score.
    """
    text = instruction.text if isinstance(instruction, Instruction) else instruction
    text = normalize_whitespace(text or "")
    if not text:
        raise PreconditionError("instruction must be nonempty")
    return mean_nll(backend, image, IAS_PREFIX, text)


def score_all(
    backend: Backend,
    image: ImageLike,
    instructions: Sequence[Instruction],
    concurrent: bool = True,
) -> list[Instruction]:
    """Attach an IAS to each instruction; results keep the input order."""
    if concurrent and len(instructions) > 1:
        with ThreadPoolExecutor(max_workers=len(instructions)) as pool:
            values = list(pool.map(lambda ins: compute_ias(backend, image, ins), instructions))
    else:
        values = [compute_ias(backend, image, ins) for ins in instructions]
    return [ins.with_ias(v) for ins, v in zip(instructions, values)]


def score_pair(
    backend: Backend,
    image: ImageLike,
    initial: Instruction,
    rewritten: Instruction,
    concurrent: bool = True,
) -> ScoredPair:
    """Score both instructions; the two computations run in parallel by default."""
    a, b = score_all(backend, image, [initial, rewritten], concurrent=concurrent)
    return ScoredPair(a, b)

"""Autonomous instruction optimization.

Rewrite the user's instruction with the language model alone, score the
original and the rewrite by IAS, list both in descending-score order as an
in-context demonstration, and have the multi-modal model (image attached)
write an instruction expected to score lower still.
"""

from __future__ import annotations

import enum
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Any, Optional, Sequence, Union

from .backend.base import (
    Backend,
    BackendResponse,
    GenerateRequest,
    HealthStatus,
    ImageLike,
    ImageRef,
    LogprobsRequest,
    as_image_ref,
)
from .errors import BackendError, ConfigurationError, EmptyOutputError, PipelineError, PreconditionError
from .scoring import Instruction, InstructionKind, ScoredPair, compute_ias

REWRITE_TEMPLATE = (
    "There is the text {}. Please modify the text to make it better while retaining "
    "the sentence structure and keywords."
)
COMPARISON_HEADER = "The following instructions are scored; lower score means better instruction."
COMPARISON_FOOTER = "Write a new instruction that would get an even lower score:\nInstruction:"


class RoundsMode(str, enum.Enum):
    STANDARD = "standard_1r"
    REWRITING = "rewriting_xr"
    LOOP = "loop_xr"


@dataclass(frozen=True)
class PipelineConfig:
    rounds_mode: RoundsMode = RoundsMode.STANDARD
    rounds: int = 1
    guard_fallback: bool = False
    score_decimals: int = 4
    max_rewrite_tokens: int = 48
    max_optimize_tokens: int = 48
    concurrent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rounds_mode", RoundsMode(self.rounds_mode))
        if not 1 <= self.rounds <= 4:
            raise ConfigurationError("rounds must be between 1 and 4")
        if self.rounds_mode is RoundsMode.STANDARD and self.rounds != 1:
            raise ConfigurationError("standard_1r runs exactly one round")
        if self.score_decimals < 0:
            raise ConfigurationError("score_decimals must be >= 0")
        if self.max_rewrite_tokens < 1 or self.max_optimize_tokens < 1:
            raise ConfigurationError("token limits must be >= 1")

    def to_dict(self) -> dict:
        return {
            "rounds_mode": self.rounds_mode.value,
            "rounds": self.rounds,
            "guard_fallback": self.guard_fallback,
            "score_decimals": self.score_decimals,
            "max_rewrite_tokens": self.max_rewrite_tokens,
            "max_optimize_tokens": self.max_optimize_tokens,
        }


@dataclass
class CallRecord:
    seq: int
    op: str
    stage: str
    round: int
    image: Optional[ImageRef]
    prompt: str
    continuation: Optional[str] = None
    max_tokens: Optional[int] = None
    output: Any = None
    latency_ms: float = 0.0
    backend: str = ""
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "op": self.op,
            "stage": self.stage,
            "round": self.round,
            "image": self.image is not None,
            "prompt": self.prompt,
            "continuation": self.continuation,
            "max_tokens": self.max_tokens,
            "output": self.output,
            "latency_ms": self.latency_ms,
            "backend": self.backend,
            "error": self.error,
        }


class CallLog:
    """Records every backend call made through handles from :meth:`bind`.

    Sequence numbers are handed out when a handle is bound, on the caller's
    thread, so the log order does not depend on which concurrent call
    finishes first.
    """

    def __init__(self, backend: Backend):
        self.backend = backend
        self._lock = threading.Lock()
        self._records: dict[int, CallRecord] = {}
        self._next = 0

    def bind(self, stage: str, round_: int) -> "_Recorded":
        with self._lock:
            seq = self._next
            self._next += 1
        return _Recorded(self, seq, stage, round_)

    def _add(self, rec: CallRecord) -> None:
        with self._lock:
            self._records[rec.seq] = rec

    @property
    def records(self) -> list[CallRecord]:
        with self._lock:
            return [self._records[k] for k in sorted(self._records)]


class _Recorded(Backend):
    def __init__(self, log: CallLog, seq: int, stage: str, round_: int):
        self._log, self._seq, self._stage, self._round = log, seq, stage, round_
        self.name = log.backend.name

    def _call(self, op, req, fn, **fields) -> BackendResponse:
        rec = CallRecord(self._seq, op, self._stage, self._round, req.image, req.prompt, **fields)
        start = time.perf_counter()
        try:
            resp = fn(req)
        except BackendError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            rec.latency_ms = (time.perf_counter() - start) * 1000.0
            self._log._add(rec)
            raise
        rec.latency_ms = resp.latency_ms or (time.perf_counter() - start) * 1000.0
        rec.backend = resp.backend
        rec.output = resp.logprobs if op == "logprobs" else resp.text
        self._log._add(rec)
        return resp

    def logprobs(self, req: LogprobsRequest) -> BackendResponse:
        return self._call("logprobs", req, self._log.backend.logprobs, continuation=req.continuation)

    def generate(self, req: GenerateRequest) -> BackendResponse:
        return self._call("generate", req, self._log.backend.generate, max_tokens=req.max_tokens)

    def healthcheck(self) -> HealthStatus:
        return self._log.backend.healthcheck()


@dataclass
class OptimizationTrace:
    mode: RoundsMode
    rounds: int
    initial: Instruction
    rewrites: list[Instruction] = field(default_factory=list)
    optimized: list[Instruction] = field(default_factory=list)
    prompts: list[str] = field(default_factory=list)
    calls: list[CallRecord] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    final: Optional[Instruction] = None
    # what each comparison round produced: its optimized instruction, or the
    # fallback carried forward once generation came back empty
    round_outputs: list[Instruction] = field(default_factory=list)

    def ias_table(self) -> dict[str, Optional[float]]:
        table = {"initial": self.initial.ias}
        for k, ins in enumerate(self.rewrites, 1):
            table["rewritten" if len(self.rewrites) == 1 else f"rewritten_{k}"] = ins.ias
        for k, ins in enumerate(self.optimized, 1):
            table[f"optimized_{k}"] = ins.ias
        return table

    def summary(self) -> dict:
        return {
            "initial": self.initial.text,
            "optimized": self.final.text if self.final else None,
            "ias": self.ias_table(),
            "mode": self.mode.value,
            "rounds": self.rounds,
            "final_kind": self.final.kind.value if self.final else None,
            "flags": list(self.flags),
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(c.to_dict(), ensure_ascii=False) for c in self.calls]
        lines.append(json.dumps({"summary": self.summary()}, ensure_ascii=False))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def rewrite_prompt(text: str, variant: int = 1) -> str:
    prompt = REWRITE_TEMPLATE.replace("{}", text, 1)
    return prompt if variant <= 1 else f"{prompt} Variant {variant}:"


def rewrite(
    backend: Backend,
    initial: Instruction,
    variant: int = 1,
    max_tokens: int = 48,
    trace: Optional[OptimizationTrace] = None,
) -> Instruction:
    """Ask the language model, without the image, for a reworded instruction.

    No quality check happens here. An empty reply degrades to a copy of the
    initial text (flagged on ``trace`` when given).
    """
    req = GenerateRequest(None, rewrite_prompt(initial.text, variant), max_tokens)
    try:
        text = backend.generate(req).text or ""
    except EmptyOutputError:
        text = ""
    text = text.strip()
    if not text:
        if trace is not None:
            trace.flags.append(f"rewrite_fallback:{variant}")
        text = initial.text
    return Instruction(text, InstructionKind.REWRITTEN)


def format_score(ias: float, decimals: int = 4) -> str:
    """Fixed-point with round-half-even on the exact binary value."""
    quantum = Decimal(1).scaleb(-decimals)
    return str(Decimal(ias).quantize(quantum, rounding=ROUND_HALF_EVEN))


def rank_descending(instructions: Sequence[Instruction]) -> list[Instruction]:
    """Worst (highest IAS) first. Equal scores keep introduction order, so a
    later instruction takes the better slot."""
    for ins in instructions:
        if ins.ias is None:
            raise PreconditionError(f"instruction {ins.text!r} has no IAS")
    order = sorted(range(len(instructions)), key=lambda i: (-instructions[i].ias, i))
    return [instructions[i] for i in order]


def build_comparison_prompt(
    pair: Union[ScoredPair, Sequence[Instruction]], decimals: int = 4
) -> str:
    items = [pair.initial, pair.rewritten] if isinstance(pair, ScoredPair) else list(pair)
    if len(items) < 2:
        raise PreconditionError("comparison needs at least two scored instructions")
    lines = [COMPARISON_HEADER]
    for ins in rank_descending(items):
        lines.append(f"Instruction: {ins.text}")
        lines.append(f"Score: {format_score(ins.ias, decimals)}")
    lines.append(COMPARISON_FOOTER)
    return "\n".join(lines)


def _clean_generated(text: str) -> str:
    for line in text.splitlines():
        line = line.strip()
        if line.lower().startswith("instruction:"):
            line = line[len("instruction:"):].strip()
        if line:
            return line
    return ""


def _best(instructions: Sequence[Instruction]) -> Instruction:
    """Lowest IAS; on ties the most recently introduced wins."""
    scored = [(i, ins) for i, ins in enumerate(instructions) if ins.ias is not None]
    if not scored:
        return instructions[0]
    return min(scored, key=lambda p: (p[1].ias, -p[0]))[1]


def _score(calls: CallLog, image, items: list[Instruction], stage: str, round_: int, concurrent: bool):
    handles = [calls.bind(stage, round_) for _ in items]
    if concurrent and len(items) > 1:
        with ThreadPoolExecutor(max_workers=len(items)) as pool:
            values = list(pool.map(lambda hi: compute_ias(hi[0], image, hi[1]), zip(handles, items)))
    else:
        values = [compute_ias(h, image, ins) for h, ins in zip(handles, items)]
    return [ins.with_ias(v) for ins, v in zip(items, values)]


def optimize(
    backend: Backend,
    image: ImageLike,
    initial: Union[Instruction, str],
    cfg: PipelineConfig = PipelineConfig(),
) -> tuple[Instruction, OptimizationTrace]:
    """Run the rewrite / score / rank / compare pipeline on one instruction.

    Raises :class:`PipelineError` (carrying the trace and a fallback drawn
    from the instructions seen so far) when a backend call fails for good.
    """
    image = as_image_ref(image)
    if isinstance(initial, str):
        initial = Instruction(initial, InstructionKind.INITIAL)
    trace = OptimizationTrace(cfg.rounds_mode, cfg.rounds, initial)
    calls = CallLog(backend)
    seen: list[Instruction] = []
    try:
        n_rewrites = cfg.rounds if cfg.rounds_mode is RoundsMode.REWRITING else 1
        rewrites = [
            rewrite(calls.bind("rewrite", 1), initial, k, cfg.max_rewrite_tokens, trace)
            for k in range(1, n_rewrites + 1)
        ]
        seen = _score(calls, image, [initial] + rewrites, "score", 1, cfg.concurrent)
        trace.initial, trace.rewrites = seen[0], seen[1:]

        n_loops = cfg.rounds if cfg.rounds_mode is RoundsMode.LOOP else 1
        final: Optional[Instruction] = None
        for round_ in range(1, n_loops + 1):
            if round_ > 1:
                (rescored,) = _score(calls, image, [seen[-1]], "score", round_, False)
                seen[-1] = trace.optimized[-1] = trace.round_outputs[-1] = rescored
            prompt = build_comparison_prompt(seen, cfg.score_decimals)
            trace.prompts.append(prompt)
            req = GenerateRequest(image, prompt, cfg.max_optimize_tokens)
            try:
                text = _clean_generated(calls.bind("compare", round_).generate(req).text or "")
            except EmptyOutputError:
                text = ""
            if not text:
                trace.flags.append(f"empty_optimized_fallback:{round_}")
                final = _best(seen)
                trace.round_outputs += [final] * (n_loops - round_ + 1)
                break
            final = Instruction(text, InstructionKind.OPTIMIZED)
            seen.append(final)
            trace.optimized.append(final)
            trace.round_outputs.append(final)

        if cfg.guard_fallback:
            if final.ias is None:
                (final,) = _score(calls, image, [final], "guard", n_loops, False)
                seen[-1] = trace.optimized[-1] = trace.round_outputs[-1] = final
            best = _best(seen)
            if best is not final:
                trace.flags.append("guard_selected_earlier")
            final = best
        trace.final = final
    except BackendError as exc:
        trace.calls = calls.records
        fallback = _best(seen) if seen else initial
        trace.flags.append("pipeline_error")
        raise PipelineError(f"instruction optimization failed: {exc}", trace, fallback) from exc
    trace.calls = calls.records
    return final, trace


def replay(trace: OptimizationTrace, backend: Backend) -> list[Any]:
    """Re-issue every recorded call; returns the outputs in log order."""
    outputs = []
    for rec in trace.calls:
        if rec.op == "logprobs":
            outputs.append(backend.logprobs(LogprobsRequest(rec.image, rec.prompt, rec.continuation)).logprobs)
        else:
            outputs.append(backend.generate(GenerateRequest(rec.image, rec.prompt, rec.max_tokens)).text)
    return outputs

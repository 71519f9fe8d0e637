"""Zero-shot evaluation in generation mode and candidate-ranking mode."""

from __future__ import annotations

import logging
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from ..backend.base import Backend, GenerateRequest
from ..errors import BackendError, ConfigurationError, DatasetError, PipelineError
from ..pipeline import PipelineConfig, optimize, rewrite
from ..scoring import Instruction, compute_ias, mean_nll
from .dataset import DatasetRecord
from .report import EvalReport, METRICS, accuracy, mean_reciprocal_rank
from .templates import DEFAULT_TEMPLATE, fill_record

log = logging.getLogger(__name__)

_ARTICLE = re.compile(r"^(a|an|the)\s+")


def normalize_answer(text: str) -> str:
    """Lowercase, drop terminal punctuation and a leading article."""
    s = " ".join(text.lower().split())
    s = s.rstrip(string.punctuation + " ")
    s = _ARTICLE.sub("", s)
    return s.strip()


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "generation"
    pipeline_enabled: bool = False
    initial_instruction_template: str = DEFAULT_TEMPLATE
    metric: str = "accuracy"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    aio_stage: str = "full"  # "full" or "rewrite" (rewrite stage only)
    record_round_ias: bool = False
    parallelism: int = 1
    max_answer_tokens: int = 16

    def __post_init__(self):
        if self.mode not in ("generation", "ranking"):
            raise ConfigurationError(f"unknown eval mode {self.mode!r}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if self.aio_stage not in ("full", "rewrite"):
            raise ConfigurationError(f"unknown AIO stage {self.aio_stage!r}")
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "pipeline_enabled": self.pipeline_enabled,
            "initial_instruction_template": self.initial_instruction_template,
            "metric": self.metric,
            "pipeline": self.pipeline.to_dict() if self.pipeline_enabled else None,
            "aio_stage": self.aio_stage if self.pipeline_enabled else None,
        }


def build_instruction(record: DatasetRecord, cfg: EvalConfig) -> str:
    return fill_record(cfg.initial_instruction_template, record.question, record.options)


def _round_ias(backend, image, trace) -> list[Optional[float]]:
    """IAS of each round's output, scoring any left unscored."""
    out = []
    for ins in trace.round_outputs:
        out.append(ins.ias if ins.ias is not None else compute_ias(backend, image, ins))
    return out


def _instruction_for(backend: Backend, record: DatasetRecord, cfg: EvalConfig, row: dict) -> str:
    base = build_instruction(record, cfg)
    row["prompt"] = base
    if not cfg.pipeline_enabled:
        return base
    initial = Instruction(base)
    if cfg.aio_stage == "rewrite":
        rewritten = rewrite(backend, initial, max_tokens=cfg.pipeline.max_rewrite_tokens)
        row["instruction"] = rewritten.text
        if cfg.record_round_ias:
            row["round_ias"] = [compute_ias(backend, record.image, rewritten)]
        return rewritten.text
    try:
        final, trace = optimize(backend, record.image, initial, cfg.pipeline)
    except PipelineError as exc:
        row["aio_error"] = str(exc)
        final, trace = exc.fallback, exc.trace
    row["instruction"] = final.text
    row["aio_flags"] = list(trace.flags) if trace else []
    if cfg.record_round_ias:
        values: list[Optional[float]] = []
        if trace is not None:
            if cfg.pipeline.rounds_mode.value == "rewriting_xr":
                values = [ins.ias for ins in trace.rewrites]
            else:
                values = _round_ias(backend, record.image, trace)
        # rounds a failed run never reached are recorded as None
        row["round_ias"] = values + [None] * (cfg.pipeline.rounds - len(values))
    return final.text


def _generation_row(backend: Backend, record: DatasetRecord, cfg: EvalConfig) -> dict:
    row = {"record_id": record.record_id, "gold": record.gold, "predicted": "", "correct": False}
    try:
        instruction = _instruction_for(backend, record, cfg, row)
        resp = backend.generate(GenerateRequest(record.image, instruction, cfg.max_answer_tokens))
        row["predicted"] = resp.text or ""
        row["correct"] = normalize_answer(row["predicted"]) == normalize_answer(record.gold)
    except BackendError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _ranking_row(backend: Backend, record: DatasetRecord, cfg: EvalConfig) -> dict:
    row = {"record_id": record.record_id, "gold": record.gold, "predicted": "", "correct": False, "rank": None}
    try:
        instruction = _instruction_for(backend, record, cfg, row)
        losses = [mean_nll(backend, record.image, instruction, option) for option in record.options]
        # stable sort: equal losses keep candidate-list order
        order = sorted(range(len(losses)), key=lambda i: losses[i])
        best = order[0]
        gold_idx = record.options.index(record.gold)
        row["losses"] = losses
        row["predicted"] = record.options[best]
        row["rank"] = order.index(gold_idx) + 1
        row["correct"] = best == gold_idx
        row["tie"] = len(losses) > 1 and losses[order[0]] == losses[order[1]]
    except BackendError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["rank"] = None
    return row


def _run(
    backend: Backend,
    records: Sequence[DatasetRecord],
    cfg: EvalConfig,
    row_fn: Callable[[Backend, DatasetRecord, EvalConfig], dict],
) -> EvalReport:
    if not records:
        raise DatasetError("cannot evaluate an empty record list")
    start = time.perf_counter()
    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            rows = list(pool.map(lambda r: row_fn(backend, r, cfg), records))
    else:
        rows = [row_fn(backend, r, cfg) for r in records]
    rows.sort(key=lambda r: r["record_id"])
    metrics = {"accuracy": accuracy(rows)}
    if cfg.mode == "ranking":
        metrics["mrr"] = mean_reciprocal_rank(rows)
    if cfg.metric not in metrics:
        raise ConfigurationError(f"metric {cfg.metric!r} is not available in {cfg.mode} mode")
    return EvalReport(
        metric=cfg.metric,
        value=metrics[cfg.metric],
        rows=rows,
        config=cfg.to_dict(),
        metrics=metrics,
        wall_clock_s=time.perf_counter() - start,
    )


def eval_generation(backend: Backend, records: Sequence[DatasetRecord], cfg: EvalConfig) -> EvalReport:
    """Generate an answer per record and score it by normalized exact match."""
    if cfg.mode != "generation":
        raise ConfigurationError("eval_generation needs mode='generation'")
    return _run(backend, records, cfg, _generation_row)


def eval_ranking(backend: Backend, records: Sequence[DatasetRecord], cfg: EvalConfig) -> EvalReport:
    """Predict the candidate with the lowest mean per-token NLL."""
    if cfg.mode != "ranking":
        raise ConfigurationError("eval_ranking needs mode='ranking'")
    missing = [r.record_id for r in records if not r.options]
    if missing:
        raise DatasetError(f"ranking mode needs options on every record; missing on {missing[:3]}")
    return _run(backend, records, cfg, _ranking_row)


def evaluate(backend: Backend, records: Sequence[DatasetRecord], cfg: EvalConfig) -> EvalReport:
    fn = eval_ranking if cfg.mode == "ranking" else eval_generation
    return fn(backend, records, cfg)

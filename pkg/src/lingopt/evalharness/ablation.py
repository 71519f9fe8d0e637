"""Run one evaluation per pipeline mode over the same records."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from ..backend.base import Backend
from ..errors import ConfigurationError, LingoptError
from ..pipeline import PipelineConfig, RoundsMode
from .dataset import DatasetRecord
from .evaluate import EvalConfig, evaluate
from .report import EvalReport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationMode:
    name: str
    aio: str = "off"  # "off", "rewrite" or "full"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.aio not in ("off", "rewrite", "full"):
            raise ConfigurationError(f"unknown AIO setting {self.aio!r}")


def standard_modes() -> list[AblationMode]:
    """AIO off, rewrite stage only, and the full pipeline."""
    return [AblationMode("aio-off", "off"), AblationMode("rewrite-only", "rewrite"), AblationMode("full", "full")]


def loop_modes(max_rounds: int = 4, mode: RoundsMode = RoundsMode.LOOP) -> list[AblationMode]:
    short = "loop" if mode is RoundsMode.LOOP else "rewriting"
    return [
        AblationMode(f"{short}-{r}r", "full", PipelineConfig(rounds_mode=mode, rounds=r))
        for r in range(1, max_rounds + 1)
    ]


@dataclass
class GridResult:
    modes: list[AblationMode]
    reports: dict[str, Optional[EvalReport]]
    ias_traces: dict[str, list[dict]]
    errors: dict[str, str]

    @property
    def complete(self) -> bool:
        return not self.errors

    def mean_round_ias(self, name: str) -> list[Optional[float]]:
        """Mean IAS per round across records (None where nothing was scored)."""
        traces = self.ias_traces.get(name) or []
        width = max((len(t["round_ias"]) for t in traces), default=0)
        means = []
        for k in range(width):
            vals = [t["round_ias"][k] for t in traces if k < len(t["round_ias"]) and t["round_ias"][k] is not None]
            means.append(math.fsum(vals) / len(vals) if vals else None)
        return means

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for mode in self.modes:
            report = self.reports.get(mode.name)
            if report is not None:
                p = out / f"report_{mode.name}.jsonl"
                report.write(p)
                written.append(p)
            if mode.name in self.ias_traces:
                p = out / f"ias_trace_{mode.name}.jsonl"
                with p.open("w", encoding="utf-8") as fh:
                    for row in self.ias_traces[mode.name]:
                        fh.write(json.dumps(row, sort_keys=True) + "\n")
                    fh.write(json.dumps({"mean_round_ias": self.mean_round_ias(mode.name)}) + "\n")
                written.append(p)
        summary = {
            "modes": [m.name for m in self.modes],
            "values": {n: (r.value if r else None) for n, r in self.reports.items()},
            "errors": self.errors,
            "complete": self.complete,
        }
        p = out / "grid_summary.json"
        p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
        return written


def run_ablation_grid(
    backend: Backend,
    records: Sequence[DatasetRecord],
    modes: Sequence[AblationMode],
    base: EvalConfig = EvalConfig(),
) -> GridResult:
    """Evaluate ``records`` once per mode; a failing mode does not stop the grid."""
    if not modes:
        raise ConfigurationError("ablation grid needs at least one mode")
    reports, traces, errors = {}, {}, {}
    for mode in modes:
        cfg = replace(
            base,
            pipeline_enabled=mode.aio != "off",
            aio_stage="rewrite" if mode.aio == "rewrite" else "full",
            pipeline=mode.pipeline,
            record_round_ias=True,
        )
        try:
            report = evaluate(backend, records, cfg)
        except LingoptError as exc:
            log.error("ablation mode %s failed: %s", mode.name, exc)
            reports[mode.name] = None
            errors[mode.name] = f"{type(exc).__name__}: {exc}"
            continue
        reports[mode.name] = report
        if mode.aio != "off":
            traces[mode.name] = [
                {"record_id": r["record_id"], "mode": mode.name, "round_ias": r.get("round_ias", [])}
                for r in report.rows
            ]
    return GridResult(list(modes), reports, traces, errors)

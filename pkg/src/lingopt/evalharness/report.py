from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


def accuracy(rows: list[dict]) -> float:
    return sum(1 for r in rows if r["correct"]) / len(rows)


def mean_reciprocal_rank(rows: list[dict]) -> float:
    return math.fsum(1.0 / r["rank"] if r.get("rank") else 0.0 for r in rows) / len(rows)


METRICS = {"accuracy": accuracy, "mrr": mean_reciprocal_rank}


def recompute(rows: list[dict], metric: str) -> float:
    return METRICS[metric](rows)


@dataclass
class EvalReport:
    metric: str
    value: float
    rows: list[dict]
    config: dict
    metrics: dict[str, float] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r.get("error"))

    def header(self) -> dict:
        return {
            "type": "header",
            "metric": self.metric,
            "value": self.value,
            "metrics": self.metrics,
            "n_records": len(self.rows),
            "n_failed": self.n_failed,
            "config": self.config,
        }

    def body(self) -> str:
        """Header and rows; byte-identical across runs with the same inputs."""
        lines = [json.dumps(self.header(), ensure_ascii=False, sort_keys=True)]
        lines += [json.dumps({"type": "row", **r}, ensure_ascii=False, sort_keys=True) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        footer = {"type": "footer", "wall_clock_s": round(self.wall_clock_s, 6)}
        return self.body() + json.dumps(footer, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "EvalReport":
        header: Optional[dict] = None
        rows, wall = [], 0.0
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "header":
                header = obj
            elif kind == "row":
                rows.append(obj)
            elif kind == "footer":
                wall = obj.get("wall_clock_s", 0.0)
        if header is None:
            raise ValueError(f"{path}: no header record")
        return cls(header["metric"], header["value"], rows, header["config"], header["metrics"], wall)


def diff_reports(before: EvalReport, after: EvalReport) -> list[dict]:
    """Records whose correctness changed between two runs."""
    old = {r["record_id"]: r for r in before.rows}
    flips = []
    for r in after.rows:
        prev = old.get(r["record_id"])
        if prev is not None and bool(prev["correct"]) != bool(r["correct"]):
            flips.append(
                {
                    "record_id": r["record_id"],
                    "before": prev["predicted"],
                    "after": r["predicted"],
                    "gold": r["gold"],
                    "direction": "fixed" if r["correct"] else "broken",
                }
            )
    return flips

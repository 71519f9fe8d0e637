"""Line-delimited JSON datasets: one image plus question/answer turns."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ..backend.base import ImageRef
from ..errors import DatasetError, LingoptError


@dataclass(frozen=True)
class Turn:
    q: str
    a: str


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    image: Optional[ImageRef]
    turns: tuple[Turn, ...]
    options: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.record_id:
            raise DatasetError("record_id must be nonempty")
        if not self.turns:
            raise DatasetError(f"record {self.record_id}: turns must be nonempty")
        if self.options is not None and self.gold not in self.options:
            raise DatasetError(
                f"record {self.record_id}: answer {self.gold!r} is not among the options"
            )

    @property
    def multi_turn(self) -> bool:
        return len(self.turns) > 1

    @property
    def gold(self) -> str:
        return self.turns[-1].a

    @property
    def question(self) -> str:
        """Earlier turns as ``q a`` pairs, then the final question."""
        history = [f"{t.q} {t.a}" for t in self.turns[:-1]]
        return " ".join(history + [self.turns[-1].q])

    def to_dict(self) -> dict:
        obj = {
            "record_id": self.record_id,
            "image": self.image.to_wire() if self.image else None,
            "turns": [{"q": t.q, "a": t.a} for t in self.turns],
        }
        if self.options is not None:
            obj["options"] = list(self.options)
        return obj

    @classmethod
    def from_dict(cls, obj) -> "DatasetRecord":
        if not isinstance(obj, dict):
            raise DatasetError("record must be a JSON object")
        try:
            turns = tuple(Turn(str(t["q"]), str(t["a"])) for t in obj["turns"])
            options = obj.get("options")
            image = obj.get("image")
            return cls(
                record_id=str(obj["record_id"]),
                image=ImageRef(image["kind"], image["value"]) if image is not None else None,
                turns=turns,
                options=tuple(str(o) for o in options) if options is not None else None,
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"missing or malformed field: {exc}") from exc
        except LingoptError as exc:
            raise DatasetError(str(exc)) from exc


def load_dataset(path) -> list[DatasetRecord]:
    path = Path(path)
    records, errors = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(DatasetRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, DatasetError) as exc:
                errors.append(f"line {lineno}: {exc}")
    if errors:
        raise DatasetError(f"{path}: {len(errors)} malformed line(s); first: {errors[0]}")
    if not records:
        raise DatasetError(f"{path}: dataset is empty")
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate record ids")
    return records


def dump_dataset(records: Iterable[DatasetRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")

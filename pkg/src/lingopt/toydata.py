"""Built-in desk-scale corpus: sixteen 8x8 images, one object label each."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backend.base import ImageRef
from .evalharness.dataset import DatasetRecord, Turn, dump_dataset
from .evalharness.templates import DEFAULT_TEMPLATE, fill_record
from .pipeline import COMPARISON_FOOTER, COMPARISON_HEADER, REWRITE_TEMPLATE
from .scoring import IAS_TEMPLATE
from .toymodel.image import ImageGrid
from .toymodel.model import ToyModelParams, init_params
from .toymodel.train import TrainExample
from .toymodel.vocab import Vocabulary

LABELS = (
    "cat", "dog", "bird", "fish", "car", "tree", "boat", "house",
    "apple", "ball", "cup", "hat", "shoe", "key", "lamp", "book",
)
QUESTIONS = (
    "what is in the image ?",
    "what object is shown ?",
    "name the main object .",
    "what do you see ?",
)


def toy_image(k: int) -> ImageGrid:
    """Quadrant brightness encodes the bits of ``k``; a faint ramp breaks ties."""
    a = np.zeros((8, 8))
    for q in range(4):
        r, c = divmod(q, 2)
        a[4 * r:4 * r + 4, 4 * c:4 * c + 4] = 0.8 if (k >> q) & 1 else 0.1
    a += np.linspace(0.0, 0.1, 64).reshape(8, 8) * (k % 3) / 2
    return ImageGrid.from_array(np.clip(a, 0.0, 1.0))


def toy_records(with_options: bool = True) -> list[DatasetRecord]:
    records = []
    for k, label in enumerate(LABELS):
        if k in (5, 11):
            turns = (Turn("is there an object ?", "yes"), Turn(QUESTIONS[k % 4], label))
        else:
            turns = (Turn(QUESTIONS[k % 4], label),)
        options = None
        if with_options:
            others = [LABELS[(k + j) % len(LABELS)] for j in (3, 7, 11)]
            options = tuple(sorted([label] + others))
        records.append(DatasetRecord(f"toy-{k:02d}", ImageRef.inline(toy_image(k)), turns, options))
    return records


def training_examples(
    records: Sequence[DatasetRecord], template: str = DEFAULT_TEMPLATE
) -> list[TrainExample]:
    """Prompt exactly as the evaluator will build it; the target is the gold answer."""
    return [
        TrainExample(
            ImageGrid.from_base64(r.image.value) if r.image and r.image.kind == "inline" else None,
            fill_record(template, r.question),
            r.gold,
        )
        for r in records
    ]


def toy_vocabulary(records: Optional[Sequence[DatasetRecord]] = None) -> Vocabulary:
    records = toy_records() if records is None else records
    texts = [fill_record(DEFAULT_TEMPLATE, r.question) for r in records]
    texts += [t.a for r in records for t in r.turns]
    texts += [o for r in records for o in (r.options or ())]
    texts += [IAS_TEMPLATE, REWRITE_TEMPLATE, COMPARISON_HEADER, COMPARISON_FOOTER, "score:"]
    return Vocabulary.build(texts)


def toy_params(seed: int = 7, **config) -> ToyModelParams:
    return init_params(toy_vocabulary(), seed=seed, **config)


def write_toy_data(out_dir) -> dict[str, Path]:
    """Dataset plus one grid file per image; returns the written paths."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    paths = {"dataset": out / "toy.jsonl"}
    dump_dataset(toy_records(), paths["dataset"])
    for k in range(len(LABELS)):
        p = out / "images" / f"toy-{k:02d}.grid"
        toy_image(k).save(p)
        paths[f"toy-{k:02d}"] = p
    return paths

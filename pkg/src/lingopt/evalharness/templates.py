"""Initial-instruction templates, one per benchmark family."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from ..errors import DatasetError

SLOT = "{}"
DEFAULT_TEMPLATE = "<Image>Question: {} \n Short answer:"


def parse_catalog(text: str) -> dict[str, str]:
    catalog = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        name, sep, template = line.partition("\t")
        if not sep or not name:
            raise DatasetError(f"template catalog line {lineno}: expected name<TAB>template")
        catalog[name] = template.replace("\\n", "\n")
    return catalog


def load_catalog(path: Optional[str] = None) -> dict[str, str]:
    if path is None:
        text = resources.files("lingopt.evalharness").joinpath("templates.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_catalog(text)


def instantiate(template: str, *values: str) -> str:
    """Fill ``{}`` slots left to right; missing values become empty strings.

    Values are inserted literally, so braces inside them are never expanded.
    """
    parts = template.split(SLOT)
    out = [parts[0]]
    for i, tail in enumerate(parts[1:]):
        out.append(values[i] if i < len(values) else "")
        out.append(tail)
    return "".join(out)


def fill_record(template: str, question: str, options: Optional[Sequence[str]] = None) -> str:
    return instantiate(template, question, ", ".join(options or ()))

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from ..errors import PreconditionError, VocabularyError

BOS, EOS, UNK, IMG = "<bos>", "<eos>", "<unk>", "<img>"
SPECIALS = (BOS, EOS, UNK, IMG)

# Marks where the backend injects visual conditioning; never a text token.
IMAGE_SENTINEL = re.compile(r"<image>", re.IGNORECASE)


def tokenize(text: str) -> list[str]:
    """Lowercase, drop the ``<Image>`` sentinel, split on whitespace."""
    return IMAGE_SENTINEL.sub(" ", text).lower().split()


@dataclass
class Vocabulary:
    tokens: list[str]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.tokens = list(self.tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise PreconditionError("vocabulary tokens must be unique")
        missing = [s for s in SPECIALS if s not in self.tokens]
        if missing:
            raise PreconditionError(f"vocabulary lacks special tokens {missing}")
        if any(not t or any(ch.isspace() for ch in t) for t in self.tokens):
            raise PreconditionError("vocabulary tokens must be nonempty and whitespace-free")
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen = sorted({tok for text in texts for tok in tokenize(text)} - set(SPECIALS))
        return cls(list(SPECIALS) + seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def bos(self) -> int:
        return self._index[BOS]

    @property
    def eos(self) -> int:
        return self._index[EOS]

    @property
    def unk(self) -> int:
        return self._index[UNK]

    def id_of(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def encode(self, text: str) -> list[int]:
        return [self.id_of(t) for t in tokenize(text)]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        out = []
        for i in ids:
            tok = self.token_of(i)
            if skip_special and tok in SPECIALS:
                continue
            out.append(tok)
        return " ".join(out)

    def token_of(self, i: int) -> str:
        if not 0 <= int(i) < len(self.tokens):
            raise VocabularyError(f"token id {i} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[int(i)]

    def check_ids(self, ids: Iterable[int]) -> list[int]:
        ids = [int(i) for i in ids]
        for i in ids:
            self.token_of(i)
        return ids

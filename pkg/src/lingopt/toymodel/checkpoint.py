"""Toy-model checkpoints: bit-exact save and load."""

from __future__ import annotations

from pathlib import Path

from ..errors import CheckpointError
from . import container
from .model import ToyConfig, ToyModelParams
from .vocab import Vocabulary

CKPT_MAGIC = b"LINGOPT-CKPT-v1\x00"
_CONFIG_INTS = ("vocab_size", "d_model", "d_ff", "max_len", "n_blocks")
_CONFIG_BOOLS = ("cmaa_projections", "cmaa_scaling")


def to_bytes(params: ToyModelParams) -> bytes:
    cfg = params.config
    meta = {"format": "lingopt-toy", "version": "1"}
    for key in _CONFIG_INTS:
        meta[key] = str(getattr(cfg, key))
    for key in _CONFIG_BOOLS:
        meta[key] = "true" if getattr(cfg, key) else "false"
    meta["vocab"] = " ".join(params.vocab.tokens)
    meta["tensors"] = ",".join(
        f"{name}:{t.shape[0]}x{t.shape[1]}:{int(params.trainable[name])}"
        for name, t in params.tensors.items()
    )
    return container.pack(CKPT_MAGIC, meta, list(params.tensors.values()))


def from_bytes(data: bytes) -> ToyModelParams:
    meta, payload = container.unpack(data, CKPT_MAGIC)
    try:
        cfg = ToyConfig(
            **{k: int(meta[k]) for k in _CONFIG_INTS},
            **{k: meta[k] == "true" for k in _CONFIG_BOOLS},
        )
        vocab = Vocabulary(meta["vocab"].split(" "))
        entries = []
        for item in meta["tensors"].split(","):
            name, shape, flag = item.split(":")
            rows, cols = (int(x) for x in shape.split("x"))
            entries.append((name, (rows, cols), flag == "1"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint metadata: {exc}") from exc
    arrays = container.read_arrays(payload, [shape for _, shape, _ in entries])
    tensors = {name: a for (name, _, _), a in zip(entries, arrays)}
    trainable = {name: flag for name, _, flag in entries}
    return ToyModelParams(cfg, vocab, tensors, trainable)


def save(params: ToyModelParams, path) -> None:
    Path(path).write_bytes(to_bytes(params))


def load(path) -> ToyModelParams:
    return from_bytes(Path(path).read_bytes())

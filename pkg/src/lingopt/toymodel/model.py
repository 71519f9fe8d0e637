"""Miniature multi-modal LM with a hand-written backward pass.

Sequence layout fed to the decoder::

    [patch rows ; u_mm rows] ++ emb(<bos> prompt continuation[:-1])

The patch rows double as the visual queries of the alignment attention and
the ``<bos>`` + prompt embeddings are its text side. Prefix positions are
never predicted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..cmaa import CmaaConfig, CmaaWeights, cmaa_fuse_with_grad
from ..errors import ConfigurationError, PreconditionError
from ..tensor import log_softmax_rows
from .image import PATCH, ImageGrid
from .vocab import Vocabulary

BLOCK_TENSORS = ("attn_wq", "attn_wk", "attn_wv", "attn_wo", "ff_w1", "ff_b1", "ff_w2", "ff_b2")
CMAA_TENSORS = ("cmaa_wq", "cmaa_wk", "cmaa_wv")


@dataclass(frozen=True)
class ToyConfig:
    vocab_size: int
    d_model: int = 32
    d_ff: int = 64
    max_len: int = 512
    n_blocks: int = 1  # 0 gives the linear-only model: head applied to embeddings
    cmaa_projections: bool = True
    cmaa_scaling: bool = True

    def __post_init__(self):
        if self.n_blocks not in (0, 1):
            raise ConfigurationError("the toy decoder has either 0 or 1 blocks")
        if min(self.vocab_size, self.d_model, self.d_ff, self.max_len) <= 0:
            raise ConfigurationError("toy model sizes must be positive")

    @property
    def cmaa(self) -> CmaaConfig:
        return CmaaConfig(
            d_text=self.d_model,
            d_vis=self.d_model,
            use_scaling=self.cmaa_scaling,
            use_projections=self.cmaa_projections,
            d_model=self.d_model if self.cmaa_projections else 0,
        )

    def tensor_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        """Declaration order; checkpoints store tensors in exactly this order."""
        d, v = self.d_model, self.vocab_size
        shapes = [
            ("patch_embed", (PATCH * PATCH, d)),
            ("token_embed", (v, d)),
            ("pos_embed", (self.max_len, d)),
        ]
        if self.cmaa_projections:
            shapes += [(name, (d, d)) for name in CMAA_TENSORS]
        if self.n_blocks:
            shapes += [
                ("attn_wq", (d, d)),
                ("attn_wk", (d, d)),
                ("attn_wv", (d, d)),
                ("attn_wo", (d, d)),
                ("ff_w1", (d, self.d_ff)),
                ("ff_b1", (1, self.d_ff)),
                ("ff_w2", (self.d_ff, d)),
                ("ff_b2", (1, d)),
            ]
        shapes += [("head_w", (d, v)), ("head_b", (1, v))]
        return shapes


@dataclass
class ToyModelParams:
    config: ToyConfig
    vocab: Vocabulary
    tensors: dict[str, np.ndarray]
    trainable: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.vocab) != self.config.vocab_size:
            raise ConfigurationError(
                f"vocabulary has {len(self.vocab)} tokens, config says {self.config.vocab_size}"
            )
        expected = self.config.tensor_shapes()
        if [n for n, _ in expected] != list(self.tensors):
            raise ConfigurationError("tensor set does not match the configuration")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise ConfigurationError(f"{name} has shape {self.tensors[name].shape}, want {shape}")
        for name in self.tensors:
            self.trainable.setdefault(name, True)

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            self.config,
            self.vocab,
            {k: v.copy() for k, v in self.tensors.items()},
            dict(self.trainable),
        )

    def set_trainable(self, names: Iterable[str], flag: bool = True) -> None:
        for name in names:
            if name not in self.tensors:
                raise ConfigurationError(f"unknown tensor {name!r}")
            self.trainable[name] = flag

    def freeze_all_but(self, names: Iterable[str]) -> None:
        keep = set(names)
        unknown = keep - set(self.tensors)
        if unknown:
            raise ConfigurationError(f"unknown tensors {sorted(unknown)}")
        for name in self.tensors:
            self.trainable[name] = name in keep

    def n_scalars(self, trainable_only: bool = False) -> int:
        return sum(
            t.size for n, t in self.tensors.items() if self.trainable[n] or not trainable_only
        )

    def cmaa_weights(self) -> Optional[CmaaWeights]:
        if not self.config.cmaa_projections:
            return None
        t = self.tensors
        return CmaaWeights(t["cmaa_wq"], t["cmaa_wk"], t["cmaa_wv"])


# Alignment layers only, the toy analog of fine-tuning just the connector.
ALIGNMENT_TENSORS = ("patch_embed",) + CMAA_TENSORS


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(vocab: Vocabulary, seed: int = 7, **config) -> ToyModelParams:
    """Random initialization; sinusoidal positions start frozen."""
    cfg = ToyConfig(vocab_size=len(vocab), **config)
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    tensors = {}
    for name, shape in cfg.tensor_shapes():
        if name == "pos_embed":
            tensors[name] = sinusoidal_positions(cfg.max_len, d)
        elif name.endswith(("_b", "_b1", "_b2")) and shape[0] == 1:
            tensors[name] = np.zeros(shape)
        elif name == "token_embed":
            tensors[name] = rng.normal(0.0, 1.0, shape)
        else:
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
    params = ToyModelParams(cfg, vocab, tensors)
    params.trainable["pos_embed"] = False
    return params


def uniform_params(vocab: Vocabulary, seed: int = 0, **config) -> ToyModelParams:
    """A model whose output head is identically zero: every next-token
    distribution is uniform over the vocabulary."""
    params = init_params(vocab, seed=seed, **config)
    params.tensors["head_w"][:] = 0.0
    params.tensors["head_b"][:] = 0.0
    return params


def encode_image(img: ImageGrid, params: ToyModelParams) -> np.ndarray:
    """One row per 4x4 patch: flattened pixels times ``patch_embed``."""
    return img.patches(PATCH) @ params.tensors["patch_embed"]


def _check_tokens(params: ToyModelParams, ids: Sequence[int]) -> list[int]:
    return params.vocab.check_ids(ids)


def _run(params: ToyModelParams, img: Optional[ImageGrid], prompt_ids, extra_ids, keep_cache=False):
    """Logits for every text position of ``<bos> prompt extra``."""
    cfg, t = params.config, params.tensors
    d = cfg.d_model
    bos = params.vocab.bos
    text_ids = [bos] + list(prompt_ids)
    fed = text_ids + list(extra_ids)
    cache = {"fed": fed, "text_ids": text_ids}

    if img is not None:
        patches = img.patches(PATCH)
        vis = patches @ t["patch_embed"]
        fused, cmaa_back = cmaa_fuse_with_grad(
            t["token_embed"][text_ids], vis, cfg.cmaa, params.cmaa_weights()
        )
        prefix = np.concatenate([vis, fused.u_mm], axis=0)
        cache.update(patches=patches, cmaa_back=cmaa_back, n_vis=vis.shape[0])
    else:
        prefix = np.zeros((0, d))
    n_prefix = prefix.shape[0]
    x = np.concatenate([prefix, t["token_embed"][fed]], axis=0)
    T = x.shape[0]
    if T > cfg.max_len:
        raise PreconditionError(f"sequence of {T} positions exceeds max_len {cfg.max_len}")
    h = x + t["pos_embed"][:T]
    cache.update(n_prefix=n_prefix, T=T)

    if cfg.n_blocks:
        h0 = h
        q, k, v = h0 @ t["attn_wq"], h0 @ t["attn_wk"], h0 @ t["attn_wv"]
        scale = 1.0 / math.sqrt(d)
        s = (q @ k.T) * scale
        s = np.where(np.tri(T, dtype=bool), s, -np.inf)
        s = s - s.max(axis=1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=1, keepdims=True)
        att = p @ v
        h1 = h0 + att @ t["attn_wo"]
        a1 = h1 @ t["ff_w1"] + t["ff_b1"]
        f = np.tanh(a1)
        h = h1 + f @ t["ff_w2"] + t["ff_b2"]
        if keep_cache:
            cache.update(h0=h0, q=q, k=k, v=v, p=p, att=att, h1=h1, f=f, scale=scale)

    h_tok = h[n_prefix:]
    logits = h_tok @ t["head_w"] + t["head_b"]
    if keep_cache:
        cache["h_tok"] = h_tok
    return logits, cache


def _backward(params: ToyModelParams, cache, d_logits, grads):
    """Accumulate parameter gradients for one sequence into ``grads``."""
    cfg, t = params.config, params.tensors
    n_prefix, T = cache["n_prefix"], cache["T"]
    grads["head_w"] += cache["h_tok"].T @ d_logits
    grads["head_b"] += d_logits.sum(axis=0, keepdims=True)
    d_h = np.zeros((T, cfg.d_model))
    d_h[n_prefix:] = d_logits @ t["head_w"].T

    if cfg.n_blocks:
        h0, h1, f = cache["h0"], cache["h1"], cache["f"]
        grads["ff_b2"] += d_h.sum(axis=0, keepdims=True)
        grads["ff_w2"] += f.T @ d_h
        d_a1 = (d_h @ t["ff_w2"].T) * (1.0 - f * f)
        grads["ff_w1"] += h1.T @ d_a1
        grads["ff_b1"] += d_a1.sum(axis=0, keepdims=True)
        d_h1 = d_h + d_a1 @ t["ff_w1"].T

        p, q, k, v, att, scale = (cache[n] for n in ("p", "q", "k", "v", "att", "scale"))
        grads["attn_wo"] += att.T @ d_h1
        d_att = d_h1 @ t["attn_wo"].T
        d_p = d_att @ v.T
        d_v = p.T @ d_att
        d_s = p * (d_p - np.sum(d_p * p, axis=1, keepdims=True)) * scale
        d_q = d_s @ k
        d_k = d_s.T @ q
        grads["attn_wq"] += h0.T @ d_q
        grads["attn_wk"] += h0.T @ d_k
        grads["attn_wv"] += h0.T @ d_v
        d_h = d_h1 + d_q @ t["attn_wq"].T + d_k @ t["attn_wk"].T + d_v @ t["attn_wv"].T

    grads["pos_embed"][:T] += d_h
    np.add.at(grads["token_embed"], cache["fed"], d_h[n_prefix:])

    if n_prefix:
        n_vis = cache["n_vis"]
        d_vis = d_h[:n_vis].copy()
        g = cache["cmaa_back"](d_h[n_vis:n_prefix])
        d_vis += g["emb_vis"]
        np.add.at(grads["token_embed"], cache["text_ids"], g["emb_text"])
        if cfg.cmaa_projections:
            grads["cmaa_wq"] += g["w_q"]
            grads["cmaa_wk"] += g["w_k"]
            grads["cmaa_wv"] += g["w_v"]
        grads["patch_embed"] += cache["patches"].T @ d_vis


def position_logprobs(
    img: Optional[ImageGrid],
    prompt_tokens: Sequence[int],
    continuation_tokens: Sequence[int],
    params: ToyModelParams,
) -> np.ndarray:
    """Full log-softmax rows, one per continuation token (shape ``n x |V|``)."""
    prompt_ids = _check_tokens(params, prompt_tokens)
    cont_ids = _check_tokens(params, continuation_tokens)
    if not cont_ids:
        raise PreconditionError("continuation must contain at least one token")
    logits, _ = _run(params, img, prompt_ids, cont_ids[:-1])
    return log_softmax_rows(logits[-len(cont_ids):])


def forward_logprobs(
    img: Optional[ImageGrid],
    prompt_tokens: Sequence[int],
    continuation_tokens: Sequence[int],
    params: ToyModelParams,
) -> np.ndarray:
    """Natural-log ``P(c_i | image, prompt, c_<i)`` for each continuation token."""
    rows = position_logprobs(img, prompt_tokens, continuation_tokens, params)
    cont = np.asarray(list(continuation_tokens), dtype=np.int64)
    return np.minimum(rows[np.arange(len(cont)), cont], 0.0)


def generate(
    img: Optional[ImageGrid],
    prompt_tokens: Sequence[int],
    max_len: int,
    params: ToyModelParams,
    temperature: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> list[int]:
    """Greedy decoding (or sampling when ``temperature > 0``); stops at ``<eos>``
    or when the context window is full.

    The returned list includes the ``<eos>`` token when one was produced.
    """
    if max_len < 1:
        raise PreconditionError("max_len must be >= 1")
    prompt_ids = _check_tokens(params, prompt_tokens)
    n_prefix = 2 * img.patches(PATCH).shape[0] if img is not None else 0
    room = params.config.max_len - n_prefix - 1 - len(prompt_ids)
    if room < 0:
        raise PreconditionError(
            f"prompt needs {params.config.max_len - room} positions, max_len is {params.config.max_len}"
        )
    eos = params.vocab.eos
    out: list[int] = []
    while len(out) < max_len and len(out) <= room:
        logits, _ = _run(params, img, prompt_ids, out)
        row = logits[-1]
        if temperature > 0:
            rng = rng if rng is not None else np.random.default_rng(0)
            z = row / temperature
            prob = np.exp(z - z.max())
            nxt = int(rng.choice(len(row), p=prob / prob.sum()))
        else:
            nxt = int(np.argmax(row))
        out.append(nxt)
        if nxt == eos:
            break
    return out


def loss_and_grads(params: ToyModelParams, batch, need_grads: bool = True):
    """Mean per-token NLL over every target token in ``batch``.

    ``batch`` holds ``(image, prompt_ids, target_ids)`` triples; gradients
    are returned for every tensor, frozen ones included (callers mask).
    """
    total_tokens = sum(len(tgt) for _, _, tgt in batch)
    if total_tokens == 0:
        raise PreconditionError("batch has no target tokens")
    grads = {n: np.zeros_like(v) for n, v in params.tensors.items()} if need_grads else None
    total_nll = 0.0
    for img, prompt_ids, target_ids in batch:
        logits, cache = _run(params, img, prompt_ids, target_ids[:-1], keep_cache=need_grads)
        n = len(target_ids)
        logp = log_softmax_rows(logits[-n:])
        idx = np.arange(n)
        total_nll -= float(logp[idx, target_ids].sum())
        if need_grads:
            d = np.exp(logp)
            d[idx, target_ids] -= 1.0
            d_logits = np.zeros_like(logits)
            d_logits[-n:] = d / total_tokens
            _backward(params, cache, d_logits, grads)
    return total_nll / total_tokens, grads

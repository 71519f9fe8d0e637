"""Cross-modal alignment attention.

Visual queries attend over the embedded text instruction: the queries are
the attention Q, the text tokens serve as both K and V. The fused output
``u_mm`` has one row per visual query and is row-concatenated onto the query
outputs before they reach the language model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor
from .errors import ConfigurationError, PreconditionError, ShapeError
from .tensor import Matrix2D


@dataclass(frozen=True)
class CmaaConfig:
    d_text: int
    d_vis: int
    use_scaling: bool = False
    use_projections: bool = False
    d_model: int = 0

    def __post_init__(self):
        if self.d_text <= 0 or self.d_vis <= 0:
            raise ConfigurationError("d_text and d_vis must be positive")
        if self.use_projections:
            if self.d_model <= 0:
                raise ConfigurationError("d_model must be > 0 when projections are enabled")
        elif self.d_text != self.d_vis:
            raise ConfigurationError(
                f"d_text ({self.d_text}) != d_vis ({self.d_vis}) requires use_projections"
            )

    @property
    def value_width(self) -> int:
        return self.d_model if self.use_projections else self.d_text

    @property
    def logit_width(self) -> int:
        return self.d_model if self.use_projections else self.d_text


@dataclass
class CmaaWeights:
    """Projection maps; ``w_q`` acts on visual rows, ``w_k``/``w_v`` on text rows."""

    w_q: Matrix2D
    w_k: Matrix2D
    w_v: Matrix2D

    @classmethod
    def init(cls, cfg: CmaaConfig, rng: np.random.Generator, scale: Optional[float] = None):
        if not cfg.use_projections:
            raise ConfigurationError("projection weights only exist with use_projections=True")
        s_vis = scale if scale is not None else 1.0 / np.sqrt(cfg.d_vis)
        s_text = scale if scale is not None else 1.0 / np.sqrt(cfg.d_text)
        return cls(
            w_q=rng.normal(0.0, s_vis, (cfg.d_vis, cfg.d_model)),
            w_k=rng.normal(0.0, s_text, (cfg.d_text, cfg.d_model)),
            w_v=rng.normal(0.0, s_text, (cfg.d_text, cfg.d_model)),
        )


@dataclass
class FusedRepresentation:
    u_mm: Matrix2D
    attention: Matrix2D


@dataclass
class _FuseCache:
    emb_text: Matrix2D
    emb_vis: Matrix2D
    q: Matrix2D
    k: Matrix2D
    v: Matrix2D
    attention: Matrix2D
    scale: float


def _check_inputs(emb_text, emb_vis, cfg: CmaaConfig, weights):
    emb_text = tensor.as_matrix(emb_text, "emb_text")
    emb_vis = tensor.as_matrix(emb_vis, "emb_vis")
    if emb_text.shape[0] == 0:
        raise PreconditionError("cmaa_fuse needs at least one text token")
    if emb_vis.shape[0] == 0:
        raise PreconditionError("cmaa_fuse needs at least one visual query")
    if emb_text.shape[1] != cfg.d_text:
        raise ShapeError(f"emb_text width {emb_text.shape[1]} != d_text {cfg.d_text}")
    if emb_vis.shape[1] != cfg.d_vis:
        raise ShapeError(f"emb_vis width {emb_vis.shape[1]} != d_vis {cfg.d_vis}")
    if cfg.use_projections and weights is None:
        raise ConfigurationError("use_projections=True but no projection weights given")
    return emb_text, emb_vis


def _fuse(emb_text, emb_vis, cfg, weights) -> tuple[FusedRepresentation, _FuseCache]:
    emb_text, emb_vis = _check_inputs(emb_text, emb_vis, cfg, weights)
    if cfg.use_projections:
        q = tensor.matmul(emb_vis, weights.w_q)
        k = tensor.matmul(emb_text, weights.w_k)
        v = tensor.matmul(emb_text, weights.w_v)
    else:
        q, k, v = emb_vis, emb_text, emb_text
    scale = 1.0 / np.sqrt(cfg.logit_width) if cfg.use_scaling else 1.0
    logits = tensor.matmul(q, k.T) * scale
    attention = tensor.softmax_rows(logits)
    u_mm = tensor.matmul(attention, v)
    cache = _FuseCache(emb_text, emb_vis, q, k, v, attention, scale)
    return FusedRepresentation(u_mm=u_mm, attention=attention), cache


def cmaa_fuse(
    emb_text: Matrix2D,
    emb_vis: Matrix2D,
    cfg: CmaaConfig,
    weights: Optional[CmaaWeights] = None,
) -> FusedRepresentation:
    """Attend from every visual query over all text tokens.

    ``attention = softmax_rows(Q K^T [* 1/sqrt(d)])`` and ``u_mm = attention V``,
    where Q comes from ``emb_vis`` and K, V from ``emb_text`` (optionally
    through learned projections).
    """
    fused, _ = _fuse(emb_text, emb_vis, cfg, weights)
    return fused


def cmaa_fuse_with_grad(emb_text, emb_vis, cfg, weights=None):
    """Like :func:`cmaa_fuse` but also returns a backward closure.

    The closure maps ``dL/du_mm`` to a dict of gradients keyed by
    ``emb_text``, ``emb_vis`` and, under projections, ``w_q``/``w_k``/``w_v``.
    """
    fused, c = _fuse(emb_text, emb_vis, cfg, weights)

    def backward(grad_u: Matrix2D) -> dict[str, Matrix2D]:
        grad_u = np.asarray(grad_u, dtype=np.float64)
        if grad_u.shape != fused.u_mm.shape:
            raise ShapeError(f"grad shape {grad_u.shape} != u_mm shape {fused.u_mm.shape}")
        a = c.attention
        d_att = grad_u @ c.v.T
        d_v = a.T @ grad_u
        # softmax backward, row-wise
        d_logits = a * (d_att - np.sum(d_att * a, axis=1, keepdims=True))
        d_logits *= c.scale
        d_q = d_logits @ c.k
        d_k = d_logits.T @ c.q
        if not cfg.use_projections:
            return {"emb_vis": d_q, "emb_text": d_k + d_v}
        return {
            "emb_vis": d_q @ weights.w_q.T,
            "emb_text": d_k @ weights.w_k.T + d_v @ weights.w_v.T,
            "w_q": c.emb_vis.T @ d_q,
            "w_k": c.emb_text.T @ d_k,
            "w_v": c.emb_text.T @ d_v,
        }

    return fused, backward


def cmaa_augment(query_out: Matrix2D, fused: FusedRepresentation) -> Matrix2D:
    """Stack ``u_mm`` under the query outputs: ``[query_out; u_mm]``."""
    query_out = tensor.as_matrix(query_out, "query_out")
    if query_out.shape[1] != fused.u_mm.shape[1]:
        raise ShapeError(
            f"query_out width {query_out.shape[1]} != u_mm width {fused.u_mm.shape[1]}"
        )
    return tensor.concat_rows(query_out, fused.u_mm)

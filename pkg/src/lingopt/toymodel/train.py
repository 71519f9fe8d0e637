"""Training loop, learning-rate schedule and finite-difference checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from ..errors import ConfigurationError, DivergenceError, PreconditionError
from .image import ImageGrid
from .model import ToyModelParams, loss_and_grads

log = logging.getLogger(__name__)

BETAS = (0.9, 0.999)
WEIGHT_DECAY = 0.05
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainSchedule:
    total_steps: int = 2000
    warmup_steps: int = 100
    peak_lr: float = 1e-2
    floor_lr: float = 0.0
    batch_size: int = 16
    seed: int = 7

    def __post_init__(self):
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ConfigurationError("total_steps and batch_size must be positive")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigurationError("warmup_steps must lie in [0, total_steps]")
        if not self.peak_lr > self.floor_lr >= 0:
            raise ConfigurationError("need peak_lr > floor_lr >= 0")

    def lr_at(self, step: int) -> float:
        """Linear ramp floor -> peak over the warmup, then cosine back to floor."""
        span = self.peak_lr - self.floor_lr
        if step < self.warmup_steps:
            return self.floor_lr + span * step / self.warmup_steps
        if step == self.warmup_steps:
            return self.peak_lr
        if step >= self.total_steps:
            return self.floor_lr
        progress = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.floor_lr + span * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TrainExample:
    image: Optional[ImageGrid]
    prompt: str
    target: str


@dataclass
class TrainResult:
    params: ToyModelParams
    trace: list[tuple[int, float, float]]
    final_loss: float

    def write_trace(self, fh: TextIO) -> None:
        for step, lr, loss in self.trace:
            fh.write(f"{step}\t{lr!r}\t{loss!r}\n")


def encode_examples(params: ToyModelParams, examples: Iterable[TrainExample]):
    """Tokenize; every target gets a closing ``<eos>``."""
    vocab = params.vocab
    return [
        (ex.image, vocab.encode(ex.prompt), vocab.encode(ex.target) + [vocab.eos])
        for ex in examples
    ]


def train(
    dataset: Sequence[TrainExample],
    params: ToyModelParams,
    sched: TrainSchedule,
    log_every: int = 0,
) -> TrainResult:
    """AdamW on the mean per-token NLL of the targets.

    Works on a copy; frozen tensors come back bit-identical.
    """
    if not dataset:
        raise PreconditionError("training dataset is empty")
    params = params.copy()
    names = [n for n in params.tensors if params.trainable[n]]
    if not names:
        raise ConfigurationError("every tensor is frozen; nothing to train")
    data = encode_examples(params, dataset)
    rng = np.random.default_rng(sched.seed)
    m = {n: np.zeros_like(params.tensors[n]) for n in names}
    v = {n: np.zeros_like(params.tensors[n]) for n in names}
    b1, b2 = BETAS
    trace = []
    for step in range(sched.total_steps):
        if sched.batch_size >= len(data):
            batch = data
        else:
            idx = np.sort(rng.choice(len(data), size=sched.batch_size, replace=False))
            batch = [data[i] for i in idx]
        loss, grads = _checked_loss(params, batch, step)
        lr = sched.lr_at(step)
        trace.append((step, lr, loss))
        if log_every and step % log_every == 0:
            log.info("step %d lr %.3g loss %.5f", step, lr, loss)
        t = step + 1
        for n in names:
            p, g = params.tensors[n], grads[n]
            m[n] = b1 * m[n] + (1 - b1) * g
            v[n] = b2 * v[n] + (1 - b2) * g * g
            m_hat = m[n] / (1 - b1**t)
            v_hat = v[n] / (1 - b2**t)
            p -= lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + WEIGHT_DECAY * p)
    final_loss, _ = _checked_loss(params, data, sched.total_steps, need_grads=False)
    return TrainResult(params, trace, final_loss)


def _checked_loss(params, batch, step, need_grads=True):
    # Overflow inside a matmul surfaces as ArithmeticError before a loss exists.
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_and_grads(params, batch, need_grads=need_grads)
    except DivergenceError:
        raise
    except ArithmeticError:
        raise DivergenceError(step, float("nan")) from None
    if not math.isfinite(loss):
        raise DivergenceError(step, loss)
    return loss, grads


def grad_check(
    params: ToyModelParams,
    probe: Sequence[TrainExample],
    step: float = 1e-5,
    max_scalars: int = 5000,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Only trainable scalars are probed; the denominator is
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    n = params.n_scalars(trainable_only=True)
    if n > max_scalars:
        raise PreconditionError(f"{n} trainable scalars; finite differences capped at {max_scalars}")
    work = params.copy()
    batch = encode_examples(work, probe)
    _, grads = loss_and_grads(work, batch)
    worst = 0.0
    for name, tensor in work.tensors.items():
        if not work.trainable[name]:
            continue
        flat = tensor.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = loss_and_grads(work, batch, need_grads=False)
            flat[i] = orig - step
            down, _ = loss_and_grads(work, batch, need_grads=False)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst

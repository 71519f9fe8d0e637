from .checkpoint import load, save
from .image import ImageGrid
from .model import (
    ToyConfig,
    ToyModelParams,
    encode_image,
    forward_logprobs,
    generate,
    init_params,
    position_logprobs,
    uniform_params,
)
from .train import TrainExample, TrainResult, TrainSchedule, grad_check, train
from .vocab import Vocabulary, tokenize

__all__ = [
    "ImageGrid",
    "ToyConfig",
    "ToyModelParams",
    "TrainExample",
    "TrainResult",
    "TrainSchedule",
    "Vocabulary",
    "encode_image",
    "forward_logprobs",
    "generate",
    "grad_check",
    "init_params",
    "load",
    "position_logprobs",
    "save",
    "tokenize",
    "train",
    "uniform_params",
]

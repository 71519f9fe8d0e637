"""Exception hierarchy shared across the package."""


class LingoptError(Exception):
    """Base class for every error raised by lingopt."""


class ShapeError(LingoptError, ValueError):
    pass


class PreconditionError(LingoptError, ValueError):
    pass


class VocabularyError(LingoptError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ConfigurationError(LingoptError, ValueError):
    pass


class DivergenceError(LingoptError, ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


class CheckpointError(LingoptError):
    pass


class BackendError(LingoptError):
    """Anything that went wrong talking to a model backend."""


class NetworkError(BackendError):
    """Transport failure or 5xx; safe to retry."""


class RequestError(BackendError):
    """The backend rejected the request (4xx or unresolvable input)."""


class ProtocolError(BackendError):
    """The backend answered with something that breaks the wire contract."""


class EmptyOutputError(BackendError):
    """Generation produced no text."""


class PipelineError(LingoptError):
    """Optimization failed; carries the partial trace and a safe fallback."""

    def __init__(self, message: str, trace=None, fallback=None):
        super().__init__(message)
        self.trace = trace
        self.fallback = fallback


class DatasetError(LingoptError, ValueError):
    pass

class QmhlabError(Exception):
    """Base class for library errors."""


class ValidationError(QmhlabError, ValueError):
    """An input violates a documented invariant."""


class ImpossibleEventError(QmhlabError, ValueError):
    """A quantity was requested for an event of probability zero."""


class QuadratureError(QmhlabError, RuntimeError):
    """Numerical integration did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3g})")
        self.achieved = achieved


class ConfigError(QmhlabError):
    """Experiment configuration is invalid; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path

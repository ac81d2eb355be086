"""Shared exception types."""


class ParameterError(ValueError):
    """A numeric parameter violates its admissible range."""


class ConfigError(ValueError):
    """A config file or CLI flag combination is invalid."""


class DivergenceError(RuntimeError):
    """An iterate left the representable / trusted region.

    Carries the first offending iteration index in ``iteration``.
    """

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = int(iteration)
        super().__init__(message or f"trajectory diverged at iteration {iteration}")


class ExperimentError(RuntimeError):
    """A Monte Carlo experiment failed as a whole (e.g. too many diverged replicas)."""

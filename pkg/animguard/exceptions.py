"""
Exception types raised by animguard.
"""


class AnimGuardError(Exception):
    pass


class ResolutionError(AnimGuardError):
    """An extractor or embedder name is not in the registry."""


class ConfigurationError(AnimGuardError):
    """Bad configuration: unknown keys, invalid values or mismatched extractor shapes."""


class ScheduleError(AnimGuardError):
    """Singular diffusion schedule entry or invalid timestep window."""


class OptimizationError(AnimGuardError):

    """
    Raised when a protect run has to abort.

    Args:
        message: str, what went wrong.
        iteration: int, 1-based PGD iteration at which the run aborted.
        breakdown: LossBreakdown or None, the last loss breakdown computed.
    """

    def __init__(self, message, iteration=None, breakdown=None):
        super().__init__(message)
        self.iteration = iteration
        self.breakdown = breakdown

    def __str__(self):
        text = super().__str__()
        if self.iteration is not None:
            text = f"iteration {self.iteration}: {text}"
        if self.breakdown is not None:
            text = f"{text} ({self.breakdown.to_dict()})"
        return text


class InsufficientDataError(AnimGuardError, ValueError):
    """Too few frames, clips or pixels for a metric; evaluation reports it as skipped."""

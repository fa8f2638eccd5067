"""Exception types shared across the package."""


class SteermlError(Exception):
    """Base class for all steerml errors."""


class DomainError(SteermlError, ValueError):
    """An argument violates a documented precondition."""


class SizeError(DomainError):
    """A requested enumeration or problem size exceeds a hard guard."""


class DegenerateDataError(DomainError):
    """Training data contains a single class (or is otherwise unusable)."""


class SamplingError(SteermlError, RuntimeError):
    """Candidate sampling could not satisfy the balance constraint."""


class GenerationError(SteermlError, RuntimeError):
    """Dataset generation exhausted its draw budget before filling quotas."""


class ConfigError(DomainError):
    """An experiment configuration is internally inconsistent."""

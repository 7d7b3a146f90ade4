"""Exception types shared across the library."""

from __future__ import annotations


class HyperdistillError(Exception):
    """Base class for all library errors."""


class DimensionError(HyperdistillError):
    """Vector dimensions do not match the declared sizes."""


class DomainError(HyperdistillError):
    """An argument lies outside the mathematically valid domain."""


class NormalizationError(DomainError):
    """A zero vector was passed where a direction is required."""


class ConfigError(HyperdistillError):
    """Invalid configuration value or file."""


class TrajectoryError(HyperdistillError):
    """A trajectory is missing data required by the requested operation."""


class DivergenceError(HyperdistillError):
    """Inner optimization produced non-finite weights."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite weights at inner step {step}")


class NeumannDivergence(HyperdistillError):
    """The Neumann recursion is growing instead of contracting."""


class EstimationError(HyperdistillError):
    """The size-estimator regression has no usable samples."""

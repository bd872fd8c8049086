"""Exception types shared across the package."""


class MeshforgeError(Exception):
    """Base class for package errors."""


class ConfigError(MeshforgeError, ValueError):
    """Malformed or out-of-range configuration."""


class SceneError(MeshforgeError, ValueError):
    """Missing, garbled, or inconsistent input data."""


class NumericError(MeshforgeError, FloatingPointError):
    """Non-finite values or a degenerate numerical state."""


class EmptySurfaceError(SceneError):
    """The scalar field has no crossing of the requested level."""


class DegenerateNormalizationError(NumericError):
    """The Poisson field vanishes at the normalization anchor."""

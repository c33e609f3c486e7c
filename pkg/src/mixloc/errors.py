"""Exception types shared across the package."""


class RealizabilityError(ValueError):
    """A distance or ratio matrix cannot be embedded in the requested dimension."""


class DegenerateGeometryError(ValueError):
    """A construction step received degenerate geometry (coplanar or colinear
    points where a generic configuration was required, or vice versa)."""


class InsufficientMeasurementsError(ValueError):
    """The available measurements cannot resolve a required quantity."""


class NotLocalizableError(RuntimeError):
    """The free-node information matrix block is singular."""


class CoverageError(RuntimeError):
    """Some free node is touched by no usable constraint."""


class DivergenceError(RuntimeError):
    """The iterative solver diverged (step size too large)."""

    def __init__(self, message: str, gamma: float | None = None):
        super().__init__(message)
        self.gamma = gamma


class BoundUnavailableError(RuntimeError):
    """The perturbation is too large for the error bound to apply."""

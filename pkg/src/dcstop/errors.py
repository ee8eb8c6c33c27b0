"""Exception types shared across the package."""


class DcstopError(ValueError):
    """Base class for every error this package raises on bad input."""


class ValidationError(DcstopError):
    """An object violates one of its structural invariants."""


class ConfigError(DcstopError):
    """A configuration value is malformed or out of the supported range."""


class CoverageError(DcstopError):
    """A time point falls outside the grid or lattice that must cover it."""


class EmptyTailError(DcstopError):
    """Conditioning a measure on a tail that carries no mass."""


class NoChildrenError(DcstopError):
    """Asked for the children of a terminal lattice node."""


class RightShiftError(DcstopError):
    """A coupling or projection moves mass leftward where only rightward moves are allowed."""


class SpliceError(DcstopError):
    """A continuation tree cannot be attached at the requested node."""


class SizeGuardError(DcstopError):
    """An exact computation was requested beyond its supported size."""

"""Exception hierarchy.

``ComputationError`` subclasses signal numerical failures (the CLI maps
them to exit status 2); plain ``ValueError`` is used for bad input.
"""


class OmcoolError(Exception):
    """Base class for all toolkit errors."""


class ComputationError(OmcoolError):
    """A computation ran but could not produce a trustworthy result."""


class InstabilityError(ComputationError):
    """Net mechanical damping is not positive (parametric instability)."""


class NoConvergence(ComputationError):
    pass


class PeakNotFound(ComputationError):
    pass


class OverlappingSidebands(ComputationError):
    pass


class AmbiguousDetuningSign(ComputationError):
    pass


class NegativeOccupancy(ComputationError):
    """Sideband asymmetry has the wrong sign for a physical occupancy."""


class MixedConfigurations(OmcoolError, ValueError):
    """Calibrations from different fiber-coupling sessions were pooled."""


class AnchorInconsistent(ComputationError):
    pass


class Degenerate(ComputationError):
    """Regression problem is ill-conditioned or has no signal."""

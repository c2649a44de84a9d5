"""Exception types raised across the package."""


class EcoDriveError(Exception):
    """Base class for all package errors."""


class PowerExceedsCapability(EcoDriveError):
    """Requested electrical power exceeds what the battery circuit can deliver."""


class InfeasibleTransition(EcoDriveError):
    """A control pair drives the squared successor speed negative."""


class RouteBounds(EcoDriveError):
    """A route lookup was made outside ``[0, length]``."""


class RouteValidationError(EcoDriveError):
    """A route document failed schema or invariant checks."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class GridBounds(EcoDriveError):
    """A value-table query fell outside the grid hull."""


class EmptyFeasibleSet(EcoDriveError):
    """No admissible (state, control) pair exists at a stage."""

    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"empty feasible set at stage {stage}")


class HorizonInfeasible(EcoDriveError):
    """The receding-horizon problem has no admissible control sequence."""

    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"horizon infeasible at stage {stage}")


class DegenerateComparison(EcoDriveError):
    """The error metric denominator vanished."""


class ArtifactMismatch(EcoDriveError):
    """A loaded artifact does not match the inputs it is used with."""

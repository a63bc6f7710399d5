"""Exception and warning classes shared across the package."""


class IonPulseError(Exception):
    """Base class for all package errors."""


class InvalidDecay(IonPulseError, ValueError):
    """The two-operator decay map is unphysical for the requested period."""


class NotConverged(IonPulseError, RuntimeError):
    """The least-squares iteration hit its iteration limit.

    The best result reached so far is attached as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularJacobianWarning(UserWarning):
    """J^T W J was rank deficient; the covariance is a pseudo-inverse."""


class DegenerateData(IonPulseError, ValueError):
    """Ellipse data collapse onto a line (phase difference near 0 or pi)."""


class InfeasibleWindow(IonPulseError, ValueError):
    """A Pockels window cannot satisfy the on-time and dark-time limits."""


class GridMismatch(IonPulseError, ValueError):
    """A time cannot be represented on the AWG sample grid."""


class RateExceeded(IonPulseError, ValueError):
    """Pockels windows follow each other faster than the driver allows."""


class UnknownRate(IonPulseError, KeyError):
    """No switch-on anomaly entry exists for a repetition rate."""


class NonPhysical(IonPulseError, ValueError):
    """Negative optical power in the conversion chain."""


class SchemaError(IonPulseError, ValueError):
    """A configuration document violates the schema.

    ``path`` names the offending key, dotted for nested keys.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class UnitError(SchemaError):
    """A physical quantity was given without a unit suffix in its key."""

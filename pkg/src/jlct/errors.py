"""Exception types raised across the package."""


class JlctError(Exception):
    """Base class for all package errors."""


class NamedColumnError(JlctError):
    """A required or referenced column name is absent."""


class OrderingError(JlctError):
    """Measurement times within a subject are not strictly increasing."""


class EmptySubjectError(JlctError):
    """A subject has no measurement rows."""


class InconsistencyError(JlctError):
    """Event data contradicts the measurement schedule."""


class ShapeError(JlctError):
    """Array dimensions do not match."""


class InsufficientEventsError(JlctError):
    """Survival fit requested on data with no events."""


class DegenerateDesignError(JlctError):
    """A model covariate is constant over the rows at risk."""


class UnfittableError(JlctError):
    """The model cannot be fit on the given data."""


class CoverageError(JlctError):
    """A curve does not cover the requested evaluation horizon."""


class CalibrationError(JlctError):
    """Root finding for a calibration constant failed to bracket."""


class UnknownClassError(JlctError):
    """A class id was not seen during fitting."""

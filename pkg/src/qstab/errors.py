"""Exception hierarchy shared across the package."""


class QstabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(QstabError, ValueError):
    """Bad dimensions, out-of-range parameters, malformed input."""


class NotReachableError(QstabError):
    """The pair (A, B) does not reach full rank within the allowed steps."""


class SingularMatrixError(QstabError):
    """A matrix that must have full row rank does not."""


class NumericalFailure(QstabError):
    """A dense numerical routine failed to converge."""


class DesignFailure(QstabError):
    """A quantizer could not be certified within the iteration budget."""


class DivergedError(QstabError):
    """A rollout produced a non-finite or runaway state."""

    def __init__(self, t, run=None, norm=float("nan")):
        self.t = t
        self.run = run
        self.norm = norm
        where = f"t={t}" if run is None else f"run={run}, t={t}"
        super().__init__(f"state diverged at {where} (|x|={norm:.3g})")

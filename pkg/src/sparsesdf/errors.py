"""Exception taxonomy shared across the package.

Every error raised by library code derives from SparseSdfError so the CLI
can map failures onto one-line machine-parseable classes and a nonzero
exit code.
"""


class SparseSdfError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SparseSdfError):
    """A caller-supplied value violates a documented precondition."""


class NumericalError(SparseSdfError):
    """A computation produced non-finite values or a singular system."""


class InternalConsistencyError(SparseSdfError):
    """Internal state invariant violated (e.g. stale feature cache)."""


class ParseError(SparseSdfError):
    """A file could not be parsed; message carries the line number."""


class TrainingError(SparseSdfError):
    """Training diverged or a step could not be completed.

    Carries the loss history recorded up to the failing iteration.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []

"""Exception hierarchy shared across the package."""


class MpqxError(Exception):
    """Base class for all package errors."""


class ValidationError(MpqxError):
    """Bad user input: malformed files, inconsistent shapes, invalid configs."""


class InfeasibleConstraintError(MpqxError):
    """The cost constraint cannot be met by any scheme in the bitwidth set."""


class SearchSpaceExhausted(MpqxError):
    """Every feasible scheme reachable by the sampler has been evaluated."""


class EvaluationAborted(MpqxError):
    """An accuracy evaluation failed mid-search; carries the partial state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state

"""Exception hierarchy shared by all modules."""


class QInferError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(QInferError, ValueError):
    pass


class ConvergenceError(QInferError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``residual`` carries the last residual seen so callers can decide whether
    the iterate is usable anyway.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class AssumptionError(QInferError, ValueError):
    """A modelling assumption the asymptotic theory relies on does not hold.

    ``assumption`` names which one: ``"unique-argmax"`` (the greedy action is
    not unique), ``"recurrence"`` (some state-action pair has zero long-run
    visit frequency, or the chain is not irreducible), ``"non-expansion"``
    (invalid generalization map).
    """

    def __init__(self, message, assumption):
        super().__init__(message)
        self.assumption = assumption


class UnvisitedPairsError(QInferError, ValueError):
    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = tuple(pairs)


class InfeasibleError(QInferError, ValueError):
    pass


class UnboundedError(QInferError, ValueError):
    pass


class DegenerateError(QInferError, ValueError):
    pass


class ConfigError(QInferError, ValueError):
    pass

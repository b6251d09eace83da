"""Exception hierarchy shared across the package."""


class DivflowError(Exception):
    """Base class for all package errors."""


class DimensionError(DivflowError, ValueError):
    pass


class ContractError(DivflowError, ValueError):
    """An input violates an operation's precondition."""


class StateError(DivflowError):
    pass


class ParseError(DivflowError, ValueError):
    pass


class DomainError(DivflowError, ValueError):
    """A function was evaluated outside its domain."""


class InfeasibleError(DivflowError):
    """A demand cannot be routed (e.g. nonzero net demand on a component)."""


class ConvergenceError(DivflowError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class CurvatureError(DivflowError):
    """A sandwich inequality failed, i.e. a piece violates its curvature bounds."""


class StallError(ConvergenceError):
    pass


class SearchError(ConvergenceError):
    pass


class StepRejected(DivflowError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class GuessTooLarge(DivflowError):
    """Evidence that the flow-value guess exceeds the true maximum."""


class RecenterError(ConvergenceError):
    pass


class AlgorithmFailure(DivflowError):
    pass

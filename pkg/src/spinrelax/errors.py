"""Exception hierarchy shared by all modules."""


class SpinRelaxError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SpinRelaxError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ParameterError(SpinRelaxError, ValueError):
    """Invalid sequence or configuration parameters."""


class ProgramError(SpinRelaxError, ValueError):
    """A pulse program is malformed or has unbound variable delays."""


class SamplingError(SpinRelaxError, ValueError):
    """A time grid is not uniformly sampled."""


class InsufficientDataError(SpinRelaxError, ValueError):
    """Too few data points for the requested analysis."""


class IllConditionedFitError(SpinRelaxError, ValueError):
    """The data cannot constrain the requested parameters."""


class RankDeficiencyError(SpinRelaxError):
    """The Jacobian at the solution is singular.

    ``parameter`` names the parameter the data do not constrain.
    """

    def __init__(self, parameter, message=None):
        self.parameter = parameter
        super().__init__(message or f"Jacobian is rank deficient in parameter '{parameter}'")


class ConvergenceError(SpinRelaxError):
    """An iterative solver stopped without converging.

    ``best`` holds the best-so-far result and ``trace`` the per-iteration
    history of (iteration, cost, damping) tuples.
    """

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = list(trace or [])

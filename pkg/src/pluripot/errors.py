"""Exception hierarchy shared by the solvers and the command line front end."""


class PluripotError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ValidationError(PluripotError, ValueError):
    exit_code = 1


class ConvergenceError(PluripotError, RuntimeError):
    """An iterative solver stopped at ``max_iter`` without meeting its tolerance."""

    exit_code = 2

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class PreconditionError(PluripotError, ValueError):
    exit_code = 3


class NotPseudoEffectiveError(PreconditionError):
    pass


class KltViolationError(PreconditionError):
    pass

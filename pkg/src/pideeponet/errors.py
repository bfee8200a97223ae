"""Exception hierarchy shared by every module."""


class PiDeepOnetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PiDeepOnetError, ValueError):
    pass


class ShapeError(PiDeepOnetError, ValueError):
    pass


class DomainError(PiDeepOnetError, ValueError):
    """A query point lies outside the closed space-time domain."""


class MarginError(DomainError):
    """A stencil point would leave the closed domain."""


class ContractError(PiDeepOnetError, ValueError):
    pass


class PoisonedGradientError(PiDeepOnetError, FloatingPointError):
    """A gradient or loss became NaN/inf."""

    def __init__(self, message: str, iteration: int | None = None, function_index: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.function_index = function_index


class NotPositiveDefiniteError(PiDeepOnetError, ArithmeticError):
    pass


class SingularSystemError(PiDeepOnetError, ArithmeticError):
    pass


class NonConvergenceError(PiDeepOnetError, ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class DivergenceError(NonConvergenceError):
    pass


class CheckpointParseError(PiDeepOnetError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(PiDeepOnetError, ValueError):
    pass

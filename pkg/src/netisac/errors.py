"""Exception hierarchy.

``ConfigError`` maps to CLI exit code 2, ``NumericalError`` to exit code 3.
"""


class NetIsacError(Exception):
    pass


class ConfigError(NetIsacError, ValueError):
    """Invalid parameters or configuration."""


class NumericalError(NetIsacError, ArithmeticError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, iteration, user, message=None):
        self.iteration = iteration
        self.user = user
        super().__init__(message or f"non-finite estimate at iteration {iteration}, user {user}")


class StabilityError(NumericalError):
    pass


class DegenerateEstimateError(NumericalError):
    pass


class NormalizationError(NumericalError):
    pass


class SubproblemError(NumericalError):
    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class ProtocolError(NumericalError):
    pass


class SizeError(ConfigError):
    pass

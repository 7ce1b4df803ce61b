"""Exception types shared across modules."""


class ImlabError(Exception):
    """Base class; ``exit_code`` is what the command line returns for it."""

    exit_code = 3


class ConfigError(ImlabError, ValueError):
    exit_code = 2

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConvergenceError(ImlabError, RuntimeError):
    def __init__(self, message, *, residual=None, history=()):
        super().__init__(message)
        self.residual = residual
        self.history = tuple(history)


class BlowUpError(ImlabError, FloatingPointError):
    def __init__(self, message, *, last_time=None, member=None):
        super().__init__(message)
        self.last_time = last_time
        self.member = member

class DimmError(Exception):
    """Base class for package errors."""


class IllConditionedError(DimmError, ArithmeticError):
    """Innovation covariance is singular or too badly conditioned to invert."""

    def __init__(self, msg, model=None, step=None):
        super().__init__(msg)
        self.model = model
        self.step = step


class DataFormatError(DimmError, ValueError):
    """Malformed dataset or config file; ``line`` is 1-based when known."""

    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


class DivergenceError(DimmError, ArithmeticError):
    pass


class TrainingAborted(DimmError, RuntimeError):
    """A loss went non-finite; ``diagnostics`` holds whatever was dumped."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics

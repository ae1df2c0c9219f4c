"""Exception hierarchy shared across the package."""


class UnlearnError(Exception):
    """Base class for all package errors."""


class InvalidInputError(UnlearnError, ValueError):
    pass


class NumericError(UnlearnError, ArithmeticError):
    """A non-finite value appeared during a computation.

    Location attributes are filled in by whichever routine detected the
    problem; absent ones stay ``None``.
    """

    def __init__(self, message, *, layer=None, iteration=None, sample=None,
                 epoch=None, batch=None):
        super().__init__(message)
        self.layer = layer
        self.iteration = iteration
        self.sample = sample
        self.epoch = epoch
        self.batch = batch


class ParseError(UnlearnError, ValueError):
    def __init__(self, message, *, offset=None, line=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        elif line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.offset = offset
        self.line = line


class SelectionError(UnlearnError, ValueError):
    """A forget rule selected no rows."""


class UndefinedMetricError(UnlearnError, ValueError):
    pass


class ConfigError(UnlearnError, ValueError):
    def __init__(self, message, *, line=None, key=None):
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if key is not None:
            prefix.append(f"field '{key}'")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key

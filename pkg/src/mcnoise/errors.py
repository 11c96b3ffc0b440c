"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage errors to 2, data/format errors to
3, numerical failures to 4.
"""


class McNoiseError(Exception):
    """Base class for all package errors."""


class UsageError(McNoiseError, ValueError):
    """Invalid combination of arguments (wrong model kind, bad config)."""


class DomainError(McNoiseError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateInputError(McNoiseError, ValueError):
    """Input that is valid in form but carries no usable signal."""


class TraceFormatError(McNoiseError, ValueError):
    """Malformed trace or manifest file.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int, optional
        1-based line number in the offending file.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(McNoiseError, ValueError):
    """Traces whose time grids cannot be combined."""


class NumericalFailure(McNoiseError, ArithmeticError):
    """A solver could not make progress.

    ``diagnostics`` holds whatever state was available when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

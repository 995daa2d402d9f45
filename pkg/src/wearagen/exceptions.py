"""Exception hierarchy shared across the package.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class ValidationError(ValueError):
    """Input, configuration or file content failed validation."""


class DegenerateCorpusError(ValidationError):
    """A channel has no spread (min == max) across the corpus."""


class CSVFormatError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A NaN/Inf appeared in activations, gradients or losses."""


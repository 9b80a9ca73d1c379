"""Exception hierarchy. Each class maps to one CLI exit code."""


class GranError(Exception):
    exit_code = 1


class InputError(GranError, ValueError):
    """Malformed or unreadable input data."""

    exit_code = 2


class ParseError(InputError):
    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.source = source


class ConfigError(InputError):
    """Invalid hyperparameter or option value."""


class ContractError(GranError):
    """A precondition of an operation was violated by the caller."""

    exit_code = 3


class ShapeError(ContractError, ValueError):
    pass


class TrainingError(ContractError):
    pass


class NumericError(GranError, ArithmeticError):
    """NaN or Inf showed up where finite values are required."""

    exit_code = 4

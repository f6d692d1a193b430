"""Exception hierarchy. The CLI maps these onto exit codes."""


class CMTSError(Exception):
    pass


class ShapeError(CMTSError, ValueError):
    pass


class DomainError(CMTSError, ValueError):
    pass


class InputError(CMTSError, ValueError):
    """Bad or empty input data (data/validation class, exit code 2)."""


class DataError(CMTSError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(DataError):
    pass


class ValidationError(DataError):
    pass


class GenerationError(DataError):
    pass


class NumericError(CMTSError, ArithmeticError):
    pass

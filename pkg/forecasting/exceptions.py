"""Error hierarchy shared by the library and the management commands.

Every error carries an ``exit_code`` so commands can map failures onto
distinct process exit codes.
"""


class PatchcastError(Exception):
    exit_code = 1


class UsageError(PatchcastError):
    exit_code = 2


class StorageError(PatchcastError):
    """I/O failure on a path."""
    exit_code = 3

    def __init__(self, message, path=None):
        self.path = path
        if path is not None:
            message = f'{message}: {path}'
        super().__init__(message)


class FormatError(PatchcastError):
    exit_code = 4


class VersionError(FormatError):
    pass


class IntegrityError(FormatError):
    pass


class ParseError(FormatError):
    """Malformed row in a source file; line is 1-based, column 0-based."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f'line {line}' + (f', column {column}' if column is not None else '') + f': {message}'
        super().__init__(message)


class NumericalError(PatchcastError):
    exit_code = 5


class TrainingDiverged(NumericalError):
    """Loss became non-finite; keeps the last finite parameters and the loss history."""

    def __init__(self, message, last_finite_state=None, history=None, stage=None):
        self.last_finite_state = last_finite_state or {}
        self.history = list(history or [])
        self.stage = stage
        self.completed = {}
        super().__init__(message)


class ConfigurationError(PatchcastError):
    exit_code = 6


class DimensionError(ConfigurationError):
    pass


class InvariantViolation(PatchcastError):
    exit_code = 7


class OracleError(InvariantViolation):
    pass

"""Exception hierarchy shared by every subsystem.

Each class carries the process exit code the CLI maps it to.
"""


class AdalocError(Exception):
    exit_code = 1


class ConfigError(AdalocError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    """Operand shapes do not satisfy an operation's contract."""


class ContractError(AdalocError, ValueError):
    exit_code = 2


class StateError(AdalocError, RuntimeError):
    exit_code = 2


class GenerationError(ConfigError):
    pass


class FormatVersionError(ConfigError):
    pass


class DataError(AdalocError):
    exit_code = 3


class DigestError(DataError):
    pass


class NumericError(AdalocError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch

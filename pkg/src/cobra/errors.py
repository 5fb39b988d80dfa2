class CobraError(Exception):
    """Base error; exit_code is what the CLI returns when this escapes a command."""

    exit_code = 1


class DimensionError(CobraError, ValueError):
    pass


class DegenerateMaskError(CobraError, ValueError):
    pass


class ConfigError(CobraError, ValueError):
    exit_code = 2


class UsageError(CobraError, ValueError):
    pass


class InfeasibleAlignmentError(CobraError, ValueError):
    pass


class DataError(CobraError, ValueError):
    exit_code = 2


class DegenerateRolloutError(CobraError, ValueError):
    pass


class DegenerateSignalError(CobraError, ValueError):
    pass


class NonFiniteError(CobraError, ArithmeticError):
    pass


class InputPathError(CobraError, OSError):
    exit_code = 2


class CheckpointMismatchError(CobraError):
    exit_code = 3


class TrainingDivergedError(CobraError, RuntimeError):
    pass

"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GrnError(Exception):
    exit_code = 1


class ConfigError(GrnError, ValueError):
    exit_code = 2


class DataFormatError(GrnError, ValueError):
    exit_code = 3


class NumericalError(GrnError, ArithmeticError):
    exit_code = 4


class LeakageError(GrnError):
    """A reference set touched a held-out subject."""

    exit_code = 5

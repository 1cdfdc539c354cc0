"""Exception hierarchy; the CLI maps each class to an exit code."""


class PmgError(Exception):
    exit_code = 1


class ConfigError(PmgError, ValueError):
    exit_code = 1


class DataError(PmgError, ValueError):
    exit_code = 2


class NumericError(PmgError, ArithmeticError):
    exit_code = 3

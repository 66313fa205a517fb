"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class HsiError(Exception):
    exit_code = 2


class UsageError(HsiError):
    exit_code = 1


class DataError(HsiError, ValueError):
    exit_code = 2


class NumericalError(HsiError, ArithmeticError):
    exit_code = 3

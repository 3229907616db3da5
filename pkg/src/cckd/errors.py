"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to so the command layer can
translate failures without a lookup table.
"""


class CCKDError(Exception):
    exit_code = 1


class InvalidArgumentError(CCKDError, ValueError):
    """Shape mismatch or out-of-domain argument."""


class ConfigError(CCKDError):
    """Bad configuration: unknown keys, impossible batch sizes, ..."""


class ValidationError(CCKDError):
    exit_code = 2


class ParseError(ValidationError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


class NumericError(CCKDError, ArithmeticError):
    exit_code = 3


class DegenerateVectorError(NumericError):
    pass


class BatchTooSmallError(InvalidArgumentError):
    pass


class UndefinedMetricError(CCKDError):
    exit_code = 3


class DegenerateSetError(UndefinedMetricError):
    pass


class FeatureWidthError(InvalidArgumentError):
    exit_code = 2

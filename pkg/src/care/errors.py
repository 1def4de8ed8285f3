"""Exception hierarchy shared by every module."""


class CareError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CareError, ValueError):
    pass


class DomainError(CareError, ValueError):
    pass


class ConfigError(CareError, ValueError):
    pass


class FormatError(CareError, ValueError):
    pass


class ContractError(CareError, RuntimeError):
    pass


class NumericalError(CareError, ArithmeticError):
    pass

"""Exception hierarchy shared by every module."""


class FedSheafError(Exception):
    """Base class for all package errors."""


class ConfigError(FedSheafError):
    pass


class DimensionError(FedSheafError, ValueError):
    pass


class ContractError(FedSheafError, ValueError):
    pass


class NumericError(FedSheafError, ArithmeticError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, op, detail=""):
        self.op = op
        msg = f"non-finite value produced by '{op}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ParseError(FedSheafError, ValueError):
    def __init__(self, path, lineno, detail):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {detail}")


class ValidationError(FedSheafError, ValueError):
    pass


class PartitionError(FedSheafError):
    pass

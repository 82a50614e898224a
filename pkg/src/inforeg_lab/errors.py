"""Exception hierarchy. Each category maps onto a CLI exit code."""


class LabError(Exception):
    exit_code = 1


class ConfigError(LabError, ValueError):
    exit_code = 2


class IngestionError(LabError, ValueError):
    exit_code = 3


class NumericError(LabError, ArithmeticError):
    exit_code = 4


class DimensionError(LabError, ValueError):
    """Operand shapes do not conform."""


class InputError(LabError, ValueError):
    """Argument out of its valid domain (bad label, bad modality index...)."""


class UndefinedInputError(InputError):
    """Quantity undefined for this input, e.g. cosine with a zero vector."""


class ContractError(LabError, RuntimeError):
    """A caller broke an ordering or freshness contract."""


class NotReadyError(LabError, RuntimeError):
    """Not enough history yet (prime-window test before two epochs)."""

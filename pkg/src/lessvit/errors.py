"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A value became NaN or Inf."""


class ConfigError(ValueError):
    """An invalid configuration, preset or parameter layout."""


class CapacityError(RuntimeError):
    """The dense reference would exceed its token budget."""


class DegenerateInputError(ValueError):
    """An input leaves nothing to compute (empty visible set, no masked tokens)."""


class InsufficientDataError(ValueError):
    pass

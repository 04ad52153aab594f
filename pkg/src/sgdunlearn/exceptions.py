"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class LabelError(ValueError):
    """A class label falls outside ``[0, c)``."""


class NumericError(ArithmeticError):
    """A computation produced NaN or Inf."""


class SizeError(ValueError):
    """Problem too large for a dense or enumerative routine."""


class StateError(RuntimeError):
    """A run log is missing something an operation needs."""


class TrainingError(RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


class FormatError(ValueError):
    def __init__(self, offset, message):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


class ConfigError(ValueError):
    pass


class FitError(ValueError):
    pass


class GridError(ValueError):
    pass


class EnumerationError(ValueError):
    pass


class DataError(ValueError):
    pass

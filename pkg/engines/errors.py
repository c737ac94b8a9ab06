# engines/errors.py


class RGGLocError(Exception):
    """Base class for every error raised by the laboratory."""

    exit_code = 1


class ConfigError(RGGLocError, ValueError):
    """Invalid run configuration or violated precondition on user input."""

    exit_code = 2


class DimensionMismatchError(RGGLocError, ValueError):
    pass


class GridTooCoarseError(ConfigError):
    """m < 2s + 3: neighbourhood windows would wrap around the torus."""


class BudgetExceededError(RGGLocError):
    """A search or enumeration ran past its configured budget."""

    exit_code = 3


class InsufficientMassError(RGGLocError):
    """V(𝔦) does not exceed the extraction threshold; the config is not localized."""


class DisjointnessError(RGGLocError, ValueError):
    pass


class UnreliableEstimateError(RGGLocError):
    pass


def exit_code_for(error):
    if isinstance(error, RGGLocError):
        return error.exit_code
    return 1

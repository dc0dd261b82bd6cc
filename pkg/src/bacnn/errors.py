"""Exception hierarchy.

Each class maps to one failure category; the command-line front end turns
them into exit codes (2 input/format, 3 config, 4 numerical).
"""


class BacnnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BacnnError, ValueError):
    pass


class ContractError(BacnnError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(BacnnError, ValueError):
    pass


class FormatError(BacnnError, ValueError):
    """A file does not match its container format."""


class DataError(BacnnError, ValueError):
    pass


class MetricError(BacnnError, ValueError):
    pass


class NumericalError(BacnnError, ArithmeticError):
    """NaN or Inf appeared where finite values are required."""


class TrainingError(NumericalError):
    pass

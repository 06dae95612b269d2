"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: data/format problems exit
with 1, parameter misuse with 2, numerical divergence during training
with 3.
"""


class SotalignError(Exception):
    """Base class for all library errors."""


class FormatError(SotalignError):
    """A binary file does not conform to the expected on-disk layout."""


class DataError(SotalignError):
    """Input values violate a data contract (NaN entries, empty input, ...)."""


class DegenerateRowError(DataError):
    """A row with (near-)zero norm where unit direction is required."""

    def __init__(self, row: int, context: str = ""):
        self.row = row
        where = f" in {context}" if context else ""
        super().__init__(f"row {row}{where} has norm below 1e-12; cannot normalize")


class UndefinedCKAError(DataError):
    """CKA is undefined because a centered kernel has zero Frobenius norm."""


class ParameterError(SotalignError):
    """A parameter is out of its admissible range or shapes are inconsistent."""


class SingularityError(SotalignError):
    """A covariance eigenvalue is numerically zero; increase the ridge term."""


class DivergenceError(SotalignError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, step: int, message: str = "non-finite value during training"):
        self.step = step
        super().__init__(f"{message} (step {step})")

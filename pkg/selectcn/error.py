import logging
import textwrap
from collections import namedtuple

logger = logging.getLogger(__name__)

pydantic_custom_error_config = {
    "ShapeMismatchError": (
        "shape_mismatch",
        "Expected {expected} rows in '{field}', found {found}",
    ),
    "MissingOutcomeError": (
        "missing_outcome",
        "Outcome missing for selected unit(s) {units}",
    ),
    "UnexpectedOutcomeError": (
        "unexpected_outcome",
        "Outcome observed for unselected unit(s) {units}, expected 'NA'",
    ),
    "SelectionValueError": (
        "selection_value",
        "Selection indicator must be 0 or 1, found {values}",
    ),
    "DuplicateColumnError": (
        "duplicate_column",
        "Columns {columns} of '{field}' are identical",
    ),
    "NonFiniteCovariateError": (
        "non_finite_covariate",
        "Non-finite value(s) in '{field}' for unit(s) {units}",
    ),
}

PydanticCustomErrors = namedtuple("PydanticCustomErrors", pydantic_custom_error_config)
custom_pydantic_errors = PydanticCustomErrors(**pydantic_custom_error_config)


class DomainError(ValueError):
    """Parameter outside the domain of a density or model"""


class ZeroMassError(ValueError):
    """Truncation region carries no probability mass in double precision"""

    def __init__(self, message: str, unit: int | None = None) -> None:
        self.unit = unit
        if unit is not None:
            message = f"{message} (unit {unit})"
        super().__init__(message)


class NonFiniteLikelihoodError(ValueError):
    def __init__(self, unit: int, value: float) -> None:
        self.unit = unit
        super().__init__(
            f"Non-finite log-likelihood contribution {value} at unit {unit}"
        )


class EstimabilityError(ValueError):
    """Not enough information in the data to estimate the model"""


class RankDeficiencyError(ValueError):
    pass


class NestingError(ValueError):
    pass


class EstimationError(RuntimeError):
    """Numerical failure while estimating a model"""


class SeparationError(EstimationError):
    pass


class AscentError(EstimationError):
    """The log-likelihood decreased between two ECM iterations"""


class SingularSystemError(EstimationError):
    pass


class ErrorCollector:
    errors: list[Exception]
    description: str | None = None

    def __init__(self, description: str | None = None) -> None:
        self.errors = []
        self.description = description

    def append(self, error: Exception) -> None:
        self.errors.append(error)

    def __repr__(self) -> str:
        error = "error" if len(self.errors) == 1 else "errors"
        error_list_str = "\n".join(
            f"{i + 1}. {error}" for i, error in enumerate(self.errors)
        )

        message = f"Collected {len(self.errors)} {error}"
        if self.description is not None:
            message += f" when checking {self.description}"

        return f"{message}:\n" + textwrap.indent(error_list_str, prefix="  ")

    def __str__(self) -> str:
        return self.__repr__()

    def __bool__(self) -> bool:
        return bool(self.errors)


def format_units(units, limit: int = 10) -> str:
    """Render unit indices for an error message, truncated after `limit` items"""
    units = [int(u) for u in units]
    shown = ", ".join(map(str, units[:limit]))
    if len(units) > limit:
        shown += f", ... ({len(units)} in total)"
    return f"[{shown}]"


from enum import Enum
from itertools import product
from pathlib import Path
from typing import Any

import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from selectcn.model import ModelKind

DEFAULT_NU_GRID = [
    (a, b) for a, b in product((0.1, 0.3, 0.5, 0.7, 0.9), (0.1, 0.3, 0.5, 0.7, 0.9))
]


class InitMethod(str, Enum):
    two_step = "two-step"
    grid = "grid"
    user = "user"


def _check_pair(pair: tuple[float, float]) -> tuple[float, float]:
    if not all(0 < value < 1 for value in pair):
        raise ValueError(f"Contamination pair {pair} must lie in (0, 1) x (0, 1)")
    return pair


class EcmOptions(BaseModel):
    """Settings of the ECM algorithm

    Attributes
    ----------
    tol : float
        Tolerance of the relative log-likelihood change.
    max_iter : int
        Maximum number of E/CM cycles.
    init : InitMethod
        Starting values from the two-step estimator, from a grid search over
        ``(nu1, nu2)`` or supplied by the user.
    nu_init : tuple of float
        Contamination pair paired with the two-step starting values.
    nu_grid : list of tuple of float
        Candidate pairs for grid initialisation.
    grid_iter : int
        Length of each pilot run of the grid search.
    fix_nu : tuple of float, optional
        Hold ``(nu1, nu2)`` fixed at these values.
    keep_path : bool
        Store the parameter vector of every iteration in the trace.
    """

    model_config = ConfigDict(use_enum_values=False)

    tol: float = Field(default=1e-6, gt=0)
    max_iter: int = Field(default=500, gt=0)
    init: InitMethod = InitMethod.two_step
    nu_init: tuple[float, float] = (0.5, 0.5)
    nu_grid: list[tuple[float, float]] = Field(
        default_factory=lambda: list(DEFAULT_NU_GRID)
    )
    grid_iter: int = Field(default=20, gt=0)
    fix_nu: tuple[float, float] | None = None
    keep_path: bool = False

    @field_validator("nu_init", "fix_nu")
    @classmethod
    def check_pair(cls, v):
        return v if v is None else _check_pair(v)

    @field_validator("nu_grid")
    @classmethod
    def check_grid(cls, v: list[tuple[float, float]]):
        if not v:
            raise ValueError("`nu_grid` must not be empty")
        return [_check_pair(pair) for pair in v]


class RunConfig(BaseModel):
    """Parameters of a command-line run, from flags and an optional yaml file"""

    input: Path | None = None
    outcome: str | None = None
    selection: str | None = None
    x: list[str] = Field(default_factory=list)
    w: list[str] = Field(default_factory=list)
    intercept: bool = True
    model: ModelKind = ModelKind.slcn
    ecm: EcmOptions = Field(default_factory=EcmOptions)
    out: Path | None = None
    seed: int = 0
    k_override: int | None = Field(default=None, ge=0)
    randomized: bool = False
    stacked: bool = False
    n_sim: int = Field(default=100, ge=19)
    level: float = Field(default=0.95, gt=0, le=1)
    simulation: dict[str, Any] = Field(default_factory=dict)

    @field_validator("x", "w", mode="before")
    @classmethod
    def single_input_to_list(cls, v):
        if v is None:
            return []
        return v if isinstance(v, list) else [v]

    @model_validator(mode="after")
    def check_columns_distinct(self) -> "RunConfig":
        if self.outcome is not None and self.outcome == self.selection:
            raise ValueError("Outcome and selection column must differ")
        return self

    @classmethod
    def from_file(cls, file: Path | str) -> "RunConfig":
        """Read a RunConfig from a yaml file

        Parameters
        ----------
        file : :class:`pathlib.Path` or path-like
            Path to config file
        """
        with open(file, "r", encoding="utf-8") as stream:
            config = yaml.safe_load(stream) or {}
        return cls(**config)

    def update(self, **overrides) -> "RunConfig":
        """New config with all non-empty `overrides` applied; keys prefixed with
        ``ecm_`` go to the ECM options"""
        values = self.model_dump()
        ecm = dict(values.pop("ecm"))
        for key, value in overrides.items():
            if value is None or value == ():
                continue
            if key.startswith("ecm_"):
                ecm[key.removeprefix("ecm_")] = value
            else:
                values[key] = list(value) if isinstance(value, tuple) else value
        return RunConfig(**values, ecm=EcmOptions(**ecm))

    def check_data_columns(self, df: pd.DataFrame) -> None:
        """Assert that every referenced column exists in `df`"""
        if self.outcome is None or self.selection is None:
            raise ValueError("Both an outcome and a selection column are required")
        columns = [self.outcome, self.selection, *self.x, *self.w]
        if missing := [col for col in columns if col not in df.columns]:
            raise ValueError(f"Column(s) {missing} not found in {self.input}")

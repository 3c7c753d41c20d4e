"""Sample-selection models with normal (SLn) and contaminated-normal (SLcn) errors.

Outcome and selection equations::

    Y1 = x'beta + e1,   Y2 = w'gamma + e2,   C = 1{Y2 > 0}

with ``(e1, e2)`` bivariate normal (SLn) or bivariate CN (SLcn) with scale
matrix ``[[sigma2, rho * sigma], [rho * sigma, 1]]``. ``Y1`` is observed only
when ``C = 1``.
"""

import hashlib
import logging
import math
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_core import PydanticCustomError
from scipy import special

from selectcn.distributions import CnParams, EscnParams, cn_sample, norm_logpdf
from selectcn.error import (
    DomainError,
    ErrorCollector,
    EstimabilityError,
    NonFiniteLikelihoodError,
    custom_pydantic_errors,
    format_units,
)

logger = logging.getLogger(__name__)

# |rho| at or beyond this bound makes the conditional selection variance vanish
RHO_BOUND = 1 - 1e-8
MISSING_TOKEN = "NA"


class ModelKind(str, Enum):
    sln = "sln"
    slcn = "slcn"


class SelectionData(BaseModel):
    """Covariates, outcomes and selection indicators of a selection sample

    Attributes
    ----------
    x : numpy.ndarray
        n x p outcome-equation covariates.
    w : numpy.ndarray
        n x q selection-equation covariates.
    v1 : numpy.ndarray
        Observed outcomes, NaN where the unit is not selected.
    c : numpy.ndarray
        Selection indicators (0 or 1).
    x_names, w_names : list of str
        Column labels used when reporting estimates.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x: np.ndarray
    w: np.ndarray
    v1: np.ndarray
    c: np.ndarray
    x_names: list[str] = Field(default_factory=list)
    w_names: list[str] = Field(default_factory=list)

    def __init__(self, **data) -> None:
        super().__init__(**data)
        # raised after validation so the error type reaches the caller
        if self.n < self.p + self.q + 4:
            raise EstimabilityError(
                f"Need at least p + q + 4 = {self.p + self.q + 4} units, found {self.n}"
            )
        if self.n_selected in (0, self.n):
            raise EstimabilityError(
                "Selection indicator is constant, the selection equation is "
                "not estimable"
            )

    @field_validator("x", "w", mode="before")
    @classmethod
    def cast_matrix(cls, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v[:, np.newaxis] if v.ndim == 1 else v

    @field_validator("v1", mode="before")
    @classmethod
    def cast_outcome(cls, v) -> np.ndarray:
        return np.asarray(v, dtype=float).ravel()

    @field_validator("c", mode="before")
    @classmethod
    def cast_selection(cls, v) -> np.ndarray:
        return np.asarray(v).ravel()

    @model_validator(mode="after")
    def check_consistency(self) -> "SelectionData":
        n = self.c.shape[0]
        errors = ErrorCollector(description="selection data")
        for field in ("x", "w", "v1"):
            found = getattr(self, field).shape[0]
            if found != n:
                errors.append(
                    PydanticCustomError(
                        *custom_pydantic_errors.ShapeMismatchError,
                        {"expected": n, "field": field, "found": found},
                    )
                )
        if errors:
            raise ValueError(errors)

        if invalid := sorted(set(np.unique(self.c).tolist()) - {0, 1}):
            errors.append(
                PydanticCustomError(
                    *custom_pydantic_errors.SelectionValueError, {"values": invalid}
                )
            )
        selected = self.c == 1
        if np.any(missing := selected & np.isnan(self.v1)):
            errors.append(
                PydanticCustomError(
                    *custom_pydantic_errors.MissingOutcomeError,
                    {"units": format_units(np.flatnonzero(missing))},
                )
            )
        if np.any(observed := ~selected & ~np.isnan(self.v1)):
            errors.append(
                PydanticCustomError(
                    *custom_pydantic_errors.UnexpectedOutcomeError,
                    {"units": format_units(np.flatnonzero(observed))},
                )
            )
        for field in ("x", "w"):
            matrix = getattr(self, field)
            if np.any(bad := ~np.all(np.isfinite(matrix), axis=1)):
                errors.append(
                    PydanticCustomError(
                        *custom_pydantic_errors.NonFiniteCovariateError,
                        {"field": field, "units": format_units(np.flatnonzero(bad))},
                    )
                )
        for i in range(self.p):
            for j in range(i + 1, self.p):
                if np.array_equal(self.x[:, i], self.x[:, j]):
                    errors.append(
                        PydanticCustomError(
                            *custom_pydantic_errors.DuplicateColumnError,
                            {"columns": [i, j], "field": "x"},
                        )
                    )
        if errors:
            raise ValueError(errors)
        return self

    @model_validator(mode="before")
    @classmethod
    def default_names(cls, values):
        if not isinstance(values, dict):
            return values
        for matrix, names in (("x", "x_names"), ("w", "w_names")):
            if not values.get(names) and values.get(matrix) is not None:
                shape = np.shape(values[matrix])
                columns = 1 if len(shape) == 1 else shape[1]
                values = {**values, names: [f"{matrix}{j}" for j in range(columns)]}
        return values

    @model_validator(mode="after")
    def check_names(self) -> "SelectionData":
        if len(self.x_names) != self.p or len(self.w_names) != self.q:
            raise ValueError("Number of column names does not match the covariates")
        return self

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.w.shape[1]

    @property
    def selected(self) -> np.ndarray:
        return self.c == 1

    @property
    def n_selected(self) -> int:
        return int(np.sum(self.c == 1))

    @property
    def fingerprint(self) -> str:
        """Short hash of the row count, selection pattern and observed outcomes"""
        digest = hashlib.sha256()
        digest.update(str(self.n).encode())
        digest.update(self.c.astype(np.int8).tobytes())
        digest.update(np.round(np.nan_to_num(self.v1, nan=0.0), 10).tobytes())
        return digest.hexdigest()[:16]

    def take(self, indices) -> "SelectionData":
        """Rows `indices` of the sample, in that order"""
        indices = np.asarray(indices)
        return SelectionData(
            x=self.x[indices],
            w=self.w[indices],
            v1=self.v1[indices],
            c=self.c[indices],
            x_names=self.x_names,
            w_names=self.w_names,
        )

    @classmethod
    def from_frame(
        cls,
        df: pd.DataFrame,
        outcome: str,
        selection: str,
        x: list[str],
        w: list[str],
        intercept: bool = True,
    ) -> "SelectionData":
        """Build a sample from named columns of a data frame

        With `intercept`, a constant column named ``const`` is prepended to both
        covariate matrices.
        """
        if missing := [col for col in [outcome, selection, *x, *w] if col not in df]:
            raise ValueError(f"Column(s) {missing} not found in the data")
        x_names, w_names = list(x), list(w)
        x_values = df[x_names].to_numpy(dtype=float)
        w_values = df[w_names].to_numpy(dtype=float)
        if intercept:
            ones = np.ones((len(df), 1))
            x_values = np.hstack([ones, x_values])
            w_values = np.hstack([ones, w_values])
            x_names, w_names = ["const", *x_names], ["const", *w_names]
        return cls(
            x=x_values,
            w=w_values,
            v1=pd.to_numeric(df[outcome]).to_numpy(dtype=float),
            c=df[selection].to_numpy(),
            x_names=x_names,
            w_names=w_names,
        )

    @classmethod
    def from_csv(cls, path: Path | str, **kwargs) -> "SelectionData":
        """Read a csv file where the exact token ``NA`` marks missing outcomes"""
        return cls.from_frame(read_csv(path), **kwargs)


def read_csv(path: Path | str) -> pd.DataFrame:
    return pd.read_csv(path, na_values=[MISSING_TOKEN], keep_default_na=False)


class Theta(BaseModel):
    """Parameters of an SLcn model; an SLn model leaves `nu1` and `nu2` unset"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float = Field(gt=0)
    rho: float = Field(gt=-1, lt=1)
    nu1: float | None = Field(default=None, gt=0, lt=1)
    nu2: float | None = Field(default=None, gt=0, lt=1)

    @field_validator("beta", "gamma", mode="before")
    @classmethod
    def cast_coefficients(cls, v) -> np.ndarray:
        return np.atleast_1d(np.asarray(v, dtype=float))

    @model_validator(mode="after")
    def check_contamination_pair(self) -> "Theta":
        if (self.nu1 is None) != (self.nu2 is None):
            raise ValueError("`nu1` and `nu2` must be given together")
        return self

    @classmethod
    def from_reparameterization(
        cls, beta, gamma, psi: float, rho_star: float, nu1=None, nu2=None
    ) -> "Theta":
        """Build from ``psi = sigma2 (1 - rho**2)`` and ``rho_star = rho sigma``"""
        sigma2 = psi + rho_star**2
        return cls(
            beta=beta,
            gamma=gamma,
            sigma2=sigma2,
            rho=rho_star / math.sqrt(sigma2),
            nu1=nu1,
            nu2=nu2,
        )

    @property
    def kind(self) -> ModelKind:
        return ModelKind.sln if self.nu1 is None else ModelKind.slcn

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def psi(self) -> float:
        return self.sigma2 * (1 - self.rho**2)

    @property
    def rho_star(self) -> float:
        return self.rho * self.sigma

    @property
    def cov(self) -> np.ndarray:
        """Scale matrix of the error pair, unit variance in the selection equation"""
        return np.array(
            [[self.sigma2, self.rho_star], [self.rho_star, 1.0]], dtype=float
        )

    @property
    def nu(self) -> tuple[float, float]:
        """Contamination pair, the normal limit ``(0, 1)`` for SLn"""
        return (0.0, 1.0) if self.nu1 is None else (self.nu1, self.nu2)

    def cn_params(self, mu=(0.0, 0.0)) -> CnParams:
        if self.nu1 is None:
            raise ValueError("An SLn parameter vector has no contamination parameters")
        return CnParams(mu=mu, sigma=self.cov, nu1=self.nu1, nu2=self.nu2)

    def to_vector(self) -> np.ndarray:
        """Free parameters ordered ``(beta, gamma, sigma, rho[, nu1, nu2])``"""
        tail = [self.sigma, self.rho]
        if self.nu1 is not None:
            tail += [self.nu1, self.nu2]
        return np.concatenate([self.beta, self.gamma, tail])

    @classmethod
    def from_vector(cls, vector, p: int, q: int, kind: ModelKind) -> "Theta":
        vector = np.asarray(vector, dtype=float)
        nu = {}
        if ModelKind(kind) == ModelKind.slcn:
            nu = {"nu1": vector[p + q + 2], "nu2": vector[p + q + 3]}
        return cls(
            beta=vector[:p],
            gamma=vector[p : p + q],
            sigma2=vector[p + q] ** 2,
            rho=vector[p + q + 1],
            **nu,
        )

    @staticmethod
    def parameter_names(
        x_names: list[str], w_names: list[str], kind: ModelKind
    ) -> list[str]:
        names = [f"beta_{n}" for n in x_names] + [f"gamma_{n}" for n in w_names]
        names += ["sigma", "rho"]
        if ModelKind(kind) == ModelKind.slcn:
            names += ["nu1", "nu2"]
        return names

    def with_nu(self, nu1: float, nu2: float) -> "Theta":
        return self.model_copy(update={"nu1": nu1, "nu2": nu2})

    def as_sln(self) -> "Theta":
        return self.model_copy(update={"nu1": None, "nu2": None})


def check_rho(theta: Theta) -> None:
    if abs(theta.rho) >= RHO_BOUND:
        raise DomainError(f"Degenerate correlation |rho| = {abs(theta.rho)}")


def resolve_kind(theta: Theta, kind: ModelKind | None) -> ModelKind:
    kind = theta.kind if kind is None else ModelKind(kind)
    if kind == ModelKind.slcn and theta.nu1 is None:
        raise ValueError("SLcn evaluation needs `nu1` and `nu2`")
    return kind


def _log_selected_joint(v, xb, wg, theta: Theta, kind: ModelKind):
    """log of f(v) * P(Y2 > 0 | Y1 = v), both mixture components summed"""
    std = math.sqrt(1 - theta.rho**2)
    t = (wg + theta.rho / theta.sigma * (v - xb)) / std
    base = norm_logpdf(v, xb, theta.sigma2) + special.log_ndtr(t)
    if kind == ModelKind.sln:
        return base
    inflated = (
        math.log(theta.nu1)
        + norm_logpdf(v, xb, theta.sigma2 / theta.nu2)
        + special.log_ndtr(math.sqrt(theta.nu2) * t)
    )
    return np.logaddexp(inflated, math.log(1 - theta.nu1) + base)


def log_selection_probability(wg, theta: Theta, kind: ModelKind | None = None):
    """``log P(Y2 > 0)`` given the selection index ``w'gamma``"""
    kind = resolve_kind(theta, kind)
    if kind == ModelKind.sln:
        return special.log_ndtr(wg)
    return np.logaddexp(
        math.log(theta.nu1) + special.log_ndtr(math.sqrt(theta.nu2) * wg),
        math.log(1 - theta.nu1) + special.log_ndtr(wg),
    )


def loglik_contributions(
    theta: Theta, data: SelectionData, kind: ModelKind | None = None
) -> np.ndarray:
    """Per-unit observed-data log-likelihood contributions

    Selected units contribute the joint density of the outcome and the event
    ``Y2 > 0``; unselected units contribute ``log P(Y2 <= 0)``.

    Raises
    ------
    DomainError
        If ``|rho| >= 1 - 1e-8``.
    NonFiniteLikelihoodError
        Naming the first unit whose contribution is not finite.
    """
    kind = resolve_kind(theta, kind)
    check_rho(theta)
    xb = data.x @ theta.beta
    wg = data.w @ theta.gamma
    sel = data.selected
    out = np.empty(data.n)
    out[sel] = _log_selected_joint(data.v1[sel], xb[sel], wg[sel], theta, kind)
    out[~sel] = log_selection_probability(-wg[~sel], theta, kind)
    if not np.all(np.isfinite(out)):
        unit = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NonFiniteLikelihoodError(unit, out[unit])
    return out


def loglik(theta: Theta, data: SelectionData, kind: ModelKind | None = None) -> float:
    """Observed-data log-likelihood, summed pairwise in unit order"""
    return float(np.sum(loglik_contributions(theta, data, kind)))


def observed_outcome_logdensity(v1, xi, wi, theta: Theta):
    """Log-density of an observed outcome given selection"""
    check_rho(theta)
    xb = np.asarray(xi, dtype=float) @ theta.beta
    wg = np.asarray(wi, dtype=float) @ theta.gamma
    kind = theta.kind
    return _log_selected_joint(
        np.asarray(v1, dtype=float), xb, wg, theta, kind
    ) - log_selection_probability(wg, theta, kind)


def observed_outcome_density(v1, xi, wi, theta: Theta):
    """Density of ``Y1`` given ``C = 1`` for a unit with covariates `xi`, `wi`

    Under SLcn this is the ESCN density with location ``x'beta``, scale
    ``sigma2``, skewness ``rho / sqrt(1 - rho**2)`` and shift
    ``w'gamma / sqrt(1 - rho**2)``; under SLn it is the extended skew-normal.
    """
    return np.exp(observed_outcome_logdensity(v1, xi, wi, theta))


def escn_params(xi, wi, theta: Theta) -> EscnParams:
    """ESCN parameters of the observed-outcome law of one unit"""
    check_rho(theta)
    if theta.nu1 is None:
        raise ValueError("ESCN parameters need an SLcn parameter vector")
    std = math.sqrt(1 - theta.rho**2)
    return EscnParams(
        mu=float(np.asarray(xi, dtype=float) @ theta.beta),
        sigma2=theta.sigma2,
        lam=theta.rho / std,
        nu1=theta.nu1,
        nu2=theta.nu2,
        tau=float(np.asarray(wi, dtype=float) @ theta.gamma) / std,
    )


def _check_nu(nu1: float, nu2: float) -> None:
    if not (0 <= nu1 <= 1 and 0 < nu2 <= 1):
        raise DomainError(f"Invalid contamination pair ({nu1}, {nu2})")


def _log_lambda_parts(x, nu1: float, nu2: float):
    x = np.asarray(x, dtype=float)
    root = math.sqrt(nu2)
    with np.errstate(divide="ignore"):
        log_w1, log_w0 = np.log(nu1), np.log1p(-nu1)
    log_num = np.logaddexp(
        log_w1 - 0.5 * math.log(nu2) + norm_logpdf(root * x), log_w0 + norm_logpdf(x)
    )
    log_den = np.logaddexp(
        log_w1 + special.log_ndtr(root * x), log_w0 + special.log_ndtr(x)
    )
    log_pdf = np.logaddexp(
        log_w1 + 0.5 * math.log(nu2) + norm_logpdf(root * x), log_w0 + norm_logpdf(x)
    )
    return log_num, log_den, log_pdf


def lambda_cn(x, nu1: float = 0.0, nu2: float = 1.0):
    """Selection-correction function of the CN law

    ``E[e2 | e2 > -x]`` for a standard CN error; the inverse Mills ratio
    ``phi(x) / Phi(x)`` in the normal limit ``nu1 = 0`` or ``nu2 = 1``.
    """
    _check_nu(nu1, nu2)
    log_num, log_den, _ = _log_lambda_parts(x, nu1, nu2)
    return np.exp(log_num - log_den)


def lambda_cn_prime(x, nu1: float = 0.0, nu2: float = 1.0):
    """Derivative of :func:`lambda_cn`, ``-f(x) / F(x) * (x + lambda(x))``"""
    _check_nu(nu1, nu2)
    log_num, log_den, log_pdf = _log_lambda_parts(x, nu1, nu2)
    return -np.exp(log_pdf - log_den) * (np.asarray(x) + np.exp(log_num - log_den))


def conditional_mean_observed(xi, wi, theta: Theta) -> float:
    """``E[Y1 | C = 1] = x'beta + rho sigma lambda(w'gamma)``"""
    xb = float(np.asarray(xi, dtype=float) @ theta.beta)
    wg = float(np.asarray(wi, dtype=float) @ theta.gamma)
    return xb + theta.rho_star * float(lambda_cn(wg, *theta.nu))


def marginal_effect(
    k: int,
    xi,
    wi,
    theta: Theta,
    chain_rule: bool = False,
    selection_index: int | None = None,
) -> float:
    """Marginal effect of outcome covariate `k` on ``E[Y1 | C = 1]``

    By default ``beta_k + rho sigma lambda'(w'gamma)``. With `chain_rule`, the
    correction is multiplied by the selection coefficient of the same covariate,
    ``gamma[selection_index]``, and vanishes when the covariate is excluded from
    the selection equation (``selection_index=None``).
    """
    if not 0 <= k < theta.beta.shape[0]:
        raise IndexError(f"Outcome covariate index {k} out of range")
    wg = float(np.asarray(wi, dtype=float) @ theta.gamma)
    slope = theta.rho_star * float(lambda_cn_prime(wg, *theta.nu))
    if chain_rule:
        if selection_index is None:
            return float(theta.beta[k])
        if not 0 <= selection_index < theta.gamma.shape[0]:
            raise IndexError(
                f"Selection covariate index {selection_index} out of range"
            )
        slope *= theta.gamma[selection_index]
    return float(theta.beta[k] + slope)


def curve_label(nu1: float, nu2: float) -> str:
    if nu1 == 0 or nu2 == 1:
        return "normal"
    return f"nu1={nu1:g},nu2={nu2:g}"


def lambda_curve_export(
    nu1_list, nu2_list, x_grid, include_normal: bool = True
) -> pd.DataFrame:
    """Tabulate ``lambda`` and its derivative over a grid

    Every ``(nu1, nu2)`` combination of the two lists is evaluated on `x_grid`;
    `include_normal` adds the ``(0, 1)`` normal limit labelled ``normal``.
    """
    nu1_list, nu2_list = list(nu1_list), list(nu2_list)
    x_grid = np.asarray(x_grid, dtype=float)
    if not nu1_list or not nu2_list or x_grid.size == 0:
        raise ValueError("Curve grids must not be empty")
    pairs = [(float(a), float(b)) for a in nu1_list for b in nu2_list]
    if include_normal and (0.0, 1.0) not in pairs:
        pairs.insert(0, (0.0, 1.0))
    frames = [
        pd.DataFrame(
            {
                "label": curve_label(nu1, nu2),
                "nu1": nu1,
                "nu2": nu2,
                "x": x_grid,
                "lambda": lambda_cn(x_grid, nu1, nu2),
                "lambda_prime": lambda_cn_prime(x_grid, nu1, nu2),
            }
        )
        for nu1, nu2 in pairs
    ]
    return pd.concat(frames, ignore_index=True)


def sample_outcomes(
    theta: Theta,
    x: np.ndarray,
    w: np.ndarray,
    rng: np.random.Generator,
    x_names: list[str] | None = None,
    w_names: list[str] | None = None,
) -> SelectionData:
    """Draw outcomes and selection indicators from the model at `theta`"""
    n = x.shape[0]
    if theta.nu1 is None:
        errors = rng.multivariate_normal(np.zeros(2), theta.cov, size=n)
    else:
        errors, _ = cn_sample(rng, theta.cn_params(), n)
    y1 = x @ theta.beta + errors[:, 0]
    selected = w @ theta.gamma + errors[:, 1] > 0
    return SelectionData(
        x=x,
        w=w,
        v1=np.where(selected, y1, np.nan),
        c=selected.astype(int),
        x_names=x_names or [],
        w_names=w_names or [],
    )

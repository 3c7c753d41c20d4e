"""Inference after an ECM fit

Standard errors come from the empirical information matrix built from per-unit
scores. The scores are the conditional expectations of the complete-data
scores, which is why they reuse the E-step quantities. Also provided:
information criteria, likelihood-ratio tests, normalised quantile residuals
with simulated envelopes, and the contamination-based classification of
units.
"""

import json
import logging
import math
from collections import Counter, namedtuple
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import special, stats

from selectcn.distributions import bvn_cdf
from selectcn.error import EstimabilityError, NestingError, format_units
from selectcn.estimation.ecm import (
    EcmTrace,
    EStepQuantities,
    design_blocks,
    e_step,
    location,
)
from selectcn.model import (
    ModelKind,
    SelectionData,
    Theta,
    check_rho,
    log_selection_probability,
    loglik,
    resolve_kind,
    sample_outcomes,
)

logger = logging.getLogger(__name__)

CDF_CLAMP = 1e-15
LrTest = namedtuple("LrTest", ["statistic", "df", "p_value"])


class Classification(str, Enum):
    good = "Good"
    outlier = "Outlier"
    inlier = "Inlier"


class FitResult(BaseModel):
    """Estimates of one fitted model with their standard errors and diagnostics

    Attributes
    ----------
    kind : ModelKind
        Fitted model.
    theta : Theta
        Parameter estimates.
    se : numpy.ndarray
        Standard errors in the order of `parameter_names`.
    loglik, aic, bic : float
        Maximised log-likelihood and information criteria.
    k : int
        Parameter count entering the criteria.
    eps_hat : numpy.ndarray
        Posterior probability of the inflated component per unit.
    classifications : list of Classification
        Detection result per unit.
    trace : EcmTrace
        Iteration record.
    fingerprint : str
        Hash of the estimation sample, see :attr:`SelectionData.fingerprint`.
    columns : dict
        Data columns the model was fitted on, as far as known.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: ModelKind
    theta: Theta
    se: np.ndarray
    parameter_names: list[str]
    loglik: float
    aic: float
    bic: float
    k: int
    n: int
    eps_hat: np.ndarray
    classifications: list[Classification]
    trace: EcmTrace = Field(default_factory=EcmTrace)
    information_flags: list[str] = Field(default_factory=list)
    fingerprint: str = ""
    x_names: list[str] = Field(default_factory=list)
    w_names: list[str] = Field(default_factory=list)
    columns: dict[str, Any] = Field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.trace.converged

    @property
    def iterations(self) -> int:
        return self.trace.iterations

    @property
    def n_free(self) -> int:
        """Number of free parameters, independent of any count override"""
        return len(self.parameter_names)

    @property
    def se_sigma2(self) -> float:
        """Delta-method standard error of ``sigma2 = sigma**2``"""
        return 2 * self.theta.sigma * float(
            self.se[self.parameter_names.index("sigma")]
        )

    def summary(self) -> pd.DataFrame:
        """Estimates and standard errors, with a derived ``sigma2`` row"""
        table = pd.DataFrame(
            {"estimate": self.theta.to_vector(), "se": self.se},
            index=pd.Index(self.parameter_names, name="parameter"),
        )
        table.loc["sigma2"] = [self.theta.sigma2, self.se_sigma2]
        return table

    def to_dict(self) -> dict[str, Any]:
        estimates = {
            name: {"value": float(value), "se": _finite_or_none(se)}
            for name, value, se in zip(
                self.parameter_names, self.theta.to_vector(), self.se
            )
        }
        estimates["sigma2"] = {
            "value": self.theta.sigma2,
            "se": _finite_or_none(self.se_sigma2),
        }
        return {
            "model": self.kind.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "k": self.k,
            "n": self.n,
            "estimates": estimates,
            "eps_hat": self.eps_hat.tolist(),
            "classifications": [c.value for c in self.classifications],
            "flags": self.trace.flags + self.information_flags,
            "loglik_path": self.trace.loglik_path,
            "init": self.trace.init,
            "fingerprint": self.fingerprint,
            "x_names": self.x_names,
            "w_names": self.w_names,
            "columns": self.columns,
        }

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "FitResult":
        kind = ModelKind(values["model"])
        x_names, w_names = values["x_names"], values["w_names"]
        names = Theta.parameter_names(x_names, w_names, kind)
        estimates = values["estimates"]
        if missing := [name for name in names if name not in estimates]:
            raise ValueError(f"Estimates missing for {missing}")
        vector = [estimates[name]["value"] for name in names]
        theta = Theta.from_vector(vector, len(x_names), len(w_names), kind)
        if "sigma2" in estimates:
            theta = theta.model_copy(update={"sigma2": estimates["sigma2"]["value"]})
        se = [estimates[name]["se"] for name in names]
        flags = values.get("flags", [])
        return cls(
            kind=kind,
            theta=theta,
            se=np.array([np.nan if s is None else s for s in se], dtype=float),
            parameter_names=names,
            loglik=values["loglik"],
            aic=values["aic"],
            bic=values["bic"],
            k=values.get("k", len(names)),
            n=values["n"],
            eps_hat=np.asarray(values["eps_hat"], dtype=float),
            classifications=[Classification(c) for c in values["classifications"]],
            trace=EcmTrace(
                loglik_path=values.get("loglik_path", [values["loglik"]]),
                iterations=values["iterations"],
                converged=values["converged"],
                flags=[f for f in flags if f.startswith("iteration")],
                init=values.get("init", "two-step"),
            ),
            information_flags=[f for f in flags if not f.startswith("iteration")],
            fingerprint=values.get("fingerprint", ""),
            x_names=x_names,
            w_names=w_names,
            columns=values.get("columns", {}),
        )

    def to_json(self, path: Path | str | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source: Path | str) -> "FitResult":
        """Read from a json file, or parse `source` itself when it is a json
        object string"""
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def _finite_or_none(value: float) -> float | None:
    return float(value) if np.isfinite(value) else None


# ------------------------------------------------------------------ scores


def score_matrix(
    theta: Theta,
    data: SelectionData,
    kind: ModelKind | None = None,
    q: EStepQuantities | None = None,
) -> np.ndarray:
    """Per-unit scores, one row per unit in the order of
    :meth:`Theta.parameter_names`

    Each row is the conditional expectation of the complete-data score given
    the observed data, which equals the gradient of the unit's observed-data
    log-likelihood contribution.
    """
    kind = resolve_kind(theta, kind)
    q = e_step(theta, data, kind) if q is None else q
    nu1, nu2 = theta.nu
    mu = location(theta, data)
    precision = np.linalg.inv(theta.cov)

    if kind == ModelKind.sln:
        expected_u = np.ones(data.n)
        weighted_y = q.y_hat
    else:
        expected_u = 1 + (nu2 - 1) * q.eps_hat
        weighted_y = q.y_hat + (nu2 - 1) * q.epsy_hat
    residual = weighted_y - expected_u[:, None] * mu
    coef = np.einsum("nak,ab,nb->nk", design_blocks(data), precision, residual)

    cross = q.gamma(mu, nu2)
    sigma, rho = theta.sigma, theta.rho
    b = np.array([[2 * sigma, rho], [rho, 0.0]])
    d = np.array([[0.0, sigma], [sigma, 0.0]])

    def scale_score(derivative: np.ndarray) -> np.ndarray:
        sandwich = precision @ derivative @ precision
        return -0.5 * np.trace(precision @ derivative) + 0.5 * np.einsum(
            "ij,nji->n", sandwich, cross
        )

    columns = [coef, scale_score(b)[:, None], scale_score(d)[:, None]]
    if kind == ModelKind.slcn:
        eps = q.eps_hat
        s_nu1 = eps / nu1 - (1 - eps) / (1 - nu1)
        s_nu2 = eps / nu2 - 0.5 * np.einsum("nij,ji->n", q.e2(mu), precision)
        columns += [s_nu1[:, None], s_nu2[:, None]]
    return np.hstack(columns)


def score_vector(
    theta: Theta, data: SelectionData, q: EStepQuantities, i: int
) -> np.ndarray:
    """Score of unit `i`"""
    if not 0 <= i < data.n:
        raise IndexError(f"Unit index {i} out of range")
    return score_matrix(theta, data, q.kind, q)[i]


def empirical_information(
    theta: Theta,
    data: SelectionData,
    kind: ModelKind | None = None,
    q: EStepQuantities | None = None,
) -> np.ndarray:
    """``sum_i s_i s_i' - S S' / n`` with ``S`` the total score"""
    scores = score_matrix(theta, data, kind, q)
    total = scores.sum(axis=0)
    information = scores.T @ scores - np.outer(total, total) / data.n
    return 0.5 * (information + information.T)


def standard_errors(information: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Square roots of the diagonal of the inverse information matrix

    Falls back to the pseudo-inverse when the matrix is not positive definite;
    the fallback is reported in the returned flags.
    """
    flags = []
    try:
        np.linalg.cholesky(information)
        covariance = np.linalg.inv(information)
    except np.linalg.LinAlgError:
        logger.warning(
            "Information matrix is not positive definite, using the pseudo-inverse"
        )
        flags.append("pseudo_inverse")
        covariance = np.linalg.pinv(information)
    diagonal = np.diag(covariance)
    with np.errstate(invalid="ignore"):
        se = np.where(diagonal >= 0, np.sqrt(np.abs(diagonal)), np.nan)
    return se, flags


# -------------------------------------------------------- model comparison


def information_criteria(loglik: float, k: int, n: int) -> tuple[float, float]:
    """AIC ``-2 l + 2 k`` and BIC ``-2 l + k log(n)``"""
    if k < 0 or n <= 0:
        raise ValueError(f"Invalid parameter count {k} or sample size {n}")
    return -2 * loglik + 2 * k, -2 * loglik + k * math.log(n)


def lr_test(null: FitResult, alt: FitResult) -> LrTest:
    """Likelihood-ratio test of `null` against the nesting model `alt`

    The statistic is referred to a chi-squared law with degrees of freedom
    equal to the difference in free parameters. Contamination parameters on
    the boundary make this distribution approximate.
    """
    if null.fingerprint and alt.fingerprint and null.fingerprint != alt.fingerprint:
        raise NestingError("Models were fitted to different data")
    if alt.loglik < null.loglik - 1e-6:
        raise NestingError(
            f"Log-likelihood of the larger model ({alt.loglik:.6f}) is below that "
            f"of the nested model ({null.loglik:.6f})"
        )
    statistic = max(0.0, 2 * (alt.loglik - null.loglik))
    df = alt.n_free - null.n_free
    if df <= 0:
        return LrTest(statistic, df, 1.0)
    return LrTest(statistic, df, float(stats.chi2.sf(statistic, df)))


def wald_intervals(fit: FitResult, level: float = 0.95) -> pd.DataFrame:
    """Untransformed intervals ``estimate +/- z * se``"""
    if not 0 < level < 1:
        raise ValueError(f"Confidence level must lie in (0, 1), got {level}")
    z = special.ndtri(0.5 + level / 2)
    table = fit.summary()
    table["lower"] = table["estimate"] - z * table["se"]
    table["upper"] = table["estimate"] + z * table["se"]
    return table


# --------------------------------------------------------------- residuals


def _cdf_values(theta: Theta, data: SelectionData) -> tuple[np.ndarray, np.ndarray]:
    """Mass below zero of the selection variable and, for selected units, the
    joint probability ``P(Y1 <= v, Y2 > 0)``"""
    check_rho(theta)
    kind = theta.kind
    xb, wg = data.x @ theta.beta, data.w @ theta.gamma
    p_unselected = np.exp(log_selection_probability(-wg, theta, kind))
    sel = data.selected
    if kind == ModelKind.sln:
        components = [(1.0, 1.0)]
    else:
        components = [(theta.nu1, 1 / theta.nu2), (1 - theta.nu1, 1.0)]
    joint = np.zeros(data.n)
    for weight, scale in components:
        root = math.sqrt(scale)
        z1 = (data.v1[sel] - xb[sel]) / (theta.sigma * root)
        # P(Z1 <= z1, Z2 > -w'g) through the reflected orthant
        joint[sel] += weight * bvn_cdf(z1, wg[sel] / root, -theta.rho)
    return p_unselected, joint


def _clamp(values: np.ndarray, units: np.ndarray) -> np.ndarray:
    outside = (values < CDF_CLAMP) | (values > 1 - CDF_CLAMP)
    if np.any(outside):
        logger.warning(
            f"Cdf values of unit(s) {format_units(units[outside])} clamped to "
            f"[{CDF_CLAMP}, {1 - CDF_CLAMP}]"
        )
    return np.clip(values, CDF_CLAMP, 1 - CDF_CLAMP)


def quantile_residuals(
    fit: FitResult | Theta,
    data: SelectionData,
    randomized: bool = False,
    conditional: bool = False,
    rng: np.random.Generator | None = None,
    stacked: bool = False,
) -> np.ndarray:
    """Normalised quantile residuals ``Phi^-1(F(y_i))``

    A selected unit with observed outcome ``v`` gets
    ``F = P(Y1 <= v, Y2 > 0)`` and an unselected unit ``F = P(Y2 <= 0)``.
    With `stacked` the selected values are shifted by ``P(Y2 <= 0)`` so that
    they continue the cdf above the point mass of the unselected outcome.
    Unselected units share the value ``P(Y2 <= 0)`` unless `randomized` draws
    it uniformly from ``[0, P(Y2 <= 0)]``.

    Parameters
    ----------
    fit : FitResult or Theta
        Fitted model.
    data : SelectionData
        Sample on which the residuals are computed.
    randomized : bool
        Randomise the residuals of unselected units.
    conditional : bool
        Residuals of selected units from the cdf of ``Y1`` given selection;
        unselected units get NaN.
    rng : numpy.random.Generator, optional
        Source of the randomisation.
    stacked : bool
        Add ``P(Y2 <= 0)`` to the cdf of selected units.

    Returns
    -------
    numpy.ndarray
        One residual per unit.
    """
    theta = fit.theta if isinstance(fit, FitResult) else fit
    p_unselected, joint = _cdf_values(theta, data)
    sel = data.selected
    units = np.arange(data.n)
    if conditional:
        residuals = np.full(data.n, np.nan)
        cdf = joint[sel] / (1 - p_unselected[sel])
        residuals[sel] = special.ndtri(_clamp(cdf, units[sel]))
        return residuals

    cdf = np.where(sel, joint + p_unselected if stacked else joint, p_unselected)
    if randomized:
        rng = np.random.default_rng() if rng is None else rng
        cdf = np.where(sel, cdf, rng.uniform(size=data.n) * p_unselected)
    return special.ndtri(_clamp(cdf, units))


def theoretical_quantiles(n: int) -> np.ndarray:
    """Normal plotting positions ``Phi^-1((i - 3/8) / (n + 1/4))``"""
    return special.ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))


def residual_envelope(
    fit: FitResult | Theta,
    data: SelectionData,
    n_sim: int = 100,
    level: float = 0.95,
    rng: np.random.Generator | None = None,
    randomized: bool = False,
    stacked: bool = False,
) -> pd.DataFrame:
    """Simulated envelope of the ordered quantile residuals

    `n_sim` samples are drawn from the fitted model on the observed
    covariates; their residuals at the fitted parameters are ordered and the
    pointwise order statistics of rank ``k`` and ``n_sim + 1 - k`` give the
    band, with ``k = max(1, floor((1 - level) / 2 * (n_sim + 1)))``.

    Returns
    -------
    pandas.DataFrame
        Columns ``unit, residual, theoretical_quantile, band_lo, band_hi``,
        sorted by residual.
    """
    if n_sim < 19:
        raise ValueError(f"An envelope needs at least 19 simulations, got {n_sim}")
    if not 0 < level <= 1:
        raise ValueError(f"Envelope level must lie in (0, 1], got {level}")
    theta = fit.theta if isinstance(fit, FitResult) else fit
    rng = np.random.default_rng() if rng is None else rng

    observed = quantile_residuals(
        theta, data, randomized=randomized, rng=rng, stacked=stacked
    )
    order = np.argsort(observed, kind="stable")
    simulated = np.empty((n_sim, data.n))
    for j in range(n_sim):
        sample = _draw_sample(theta, data, rng)
        simulated[j] = np.sort(
            quantile_residuals(
                theta, sample, randomized=randomized, rng=rng, stacked=stacked
            )
        )
    simulated.sort(axis=0)
    k = max(1, math.floor((1 - level) / 2 * (n_sim + 1)))
    return pd.DataFrame(
        {
            "unit": order,
            "residual": observed[order],
            "theoretical_quantile": theoretical_quantiles(data.n),
            "band_lo": simulated[k - 1],
            "band_hi": simulated[n_sim - k],
        }
    )


def _draw_sample(
    theta: Theta, data: SelectionData, rng: np.random.Generator, attempts: int = 20
) -> SelectionData:
    for _ in range(attempts):
        try:
            return sample_outcomes(
                theta, data.x, data.w, rng, data.x_names, data.w_names
            )
        except EstimabilityError:
            continue
    raise EstimabilityError(
        "Simulated samples keep a constant selection indicator, no envelope possible"
    )


# --------------------------------------------------------------- detection


def classify_units(nu1_hat: float, eps_hat) -> list[Classification]:
    """Label units through the fitted contamination

    With ``nu1_hat <= 0.5`` the inflated component describes a minority in the
    tails, so units with ``eps_hat > 0.5`` are outliers. Otherwise the base
    component is the minority with the smaller variance and units with
    ``eps_hat < 0.5`` are inliers. Every unit is classified, whether or not its
    outcome was observed.
    """
    eps_hat = np.asarray(eps_hat, dtype=float)
    if np.any((eps_hat < 0) | (eps_hat > 1)):
        raise ValueError("Posterior probabilities must lie in [0, 1]")
    if nu1_hat <= 0.5:
        flagged, label = eps_hat > 0.5, Classification.outlier
    else:
        flagged, label = eps_hat < 0.5, Classification.inlier
    return [label if f else Classification.good for f in flagged]


def detection_summary(classifications: list[Classification]) -> dict[str, int]:
    """Number of units per class, every class present"""
    counts = Counter(Classification(c) for c in classifications)
    return {c.value: counts.get(c, 0) for c in Classification}


# ---------------------------------------------------------------- assembly


def build_fit_result(
    data: SelectionData,
    theta: Theta,
    trace: EcmTrace,
    kind: ModelKind | None = None,
    k_override: int | None = None,
    columns: dict[str, Any] | None = None,
) -> FitResult:
    """Standard errors, criteria and classifications at the estimates"""
    kind = resolve_kind(theta, kind)
    q = e_step(theta, data, kind)
    se, flags = standard_errors(empirical_information(theta, data, kind, q))
    names = Theta.parameter_names(data.x_names, data.w_names, kind)
    k = len(names) if k_override is None else k_override
    value = loglik(theta, data, kind)
    aic, bic = information_criteria(value, k, data.n)
    return FitResult(
        kind=kind,
        theta=theta,
        se=se,
        parameter_names=names,
        loglik=value,
        aic=aic,
        bic=bic,
        k=k,
        n=data.n,
        eps_hat=q.eps_hat,
        classifications=classify_units(theta.nu[0], q.eps_hat),
        trace=trace,
        information_flags=flags,
        fingerprint=data.fingerprint,
        x_names=data.x_names,
        w_names=data.w_names,
        columns=columns or {},
    )

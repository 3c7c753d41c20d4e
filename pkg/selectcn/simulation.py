"""Simulated selection samples and the Monte Carlo replication harness"""

import json
import logging
import math
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import special

from selectcn.config import EcmOptions
from selectcn.distributions import (
    CnParams,
    cn_quantile,
    cn_sample,
    slash_quantile,
    slash_sample,
)
from selectcn.error import EstimationError
from selectcn.estimation.ecm import fit
from selectcn.inference import build_fit_result
from selectcn.model import ModelKind, SelectionData

logger = logging.getLogger(__name__)

MISSING_RATE_GRID = (0.10, 0.25, 0.50)
SAMPLE_SIZES = (250, 500, 1000)
X_NAMES = ["const", "w1"]
W_NAMES = ["const", "w1", "w2"]

ReplicateFit = namedtuple("ReplicateFit", ["table", "aic", "bic"])


class ErrorLaw(str, Enum):
    normal = "normal"
    cn = "cn"
    slash = "slash"


class SimDesign(BaseModel):
    """Data-generating design of a simulation study

    Covariates are ``w = (1, w1, w2)`` with ``w1 ~ U(-1, 1)`` and
    ``w2 ~ N(0, 1)``; the outcome equation uses ``x = (1, w1)`` so that ``w2``
    is excluded from it.

    Attributes
    ----------
    n : int
        Sample size.
    law : ErrorLaw
        Bivariate error law; ``cn`` needs `nu1` and `nu2`, ``slash`` needs `q`.
    beta : list of float
        Outcome coefficients on ``(1, w1)``.
    gamma_slope : list of float
        Selection coefficients on ``(w1, w2)``.
    target_missing_rate : float
        Expected share of unselected units, reached through the selection
        intercept.
    gamma0 : float, optional
        Explicit selection intercept, overriding the calibrated one.
    """

    model_config = ConfigDict(frozen=True)

    n: int = Field(default=500, ge=10)
    law: ErrorLaw = ErrorLaw.normal
    nu1: float | None = Field(default=None, gt=0, lt=1)
    nu2: float | None = Field(default=None, gt=0, lt=1)
    q: float | None = Field(default=None, gt=0)
    beta: list[float] = Field(default_factory=lambda: [1.0, 0.5])
    gamma_slope: list[float] = Field(default_factory=lambda: [0.3, -0.5])
    target_missing_rate: float = Field(default=0.25, gt=0, lt=1)
    sigma2: float = Field(default=1.0, gt=0)
    rho: float = Field(default=0.6, gt=-1, lt=1)
    gamma0: float | None = None
    seed: int = 0

    @field_validator("beta")
    @classmethod
    def check_beta(cls, v: list[float]) -> list[float]:
        if len(v) != len(X_NAMES):
            raise ValueError(f"`beta` needs {len(X_NAMES)} coefficients")
        return v

    @field_validator("gamma_slope")
    @classmethod
    def check_gamma_slope(cls, v: list[float]) -> list[float]:
        if len(v) != len(W_NAMES) - 1:
            raise ValueError(f"`gamma_slope` needs {len(W_NAMES) - 1} coefficients")
        return v

    @model_validator(mode="after")
    def check_law_parameters(self) -> "SimDesign":
        if self.law == ErrorLaw.cn and (self.nu1 is None or self.nu2 is None):
            raise ValueError("Contaminated-normal errors need `nu1` and `nu2`")
        if self.law == ErrorLaw.slash and self.q is None:
            raise ValueError("Slash errors need the tail parameter `q`")
        return self

    @property
    def intercept(self) -> float:
        """Selection intercept, calibrated unless given explicitly"""
        if self.gamma0 is not None:
            return self.gamma0
        return calibrate_gamma0(
            self.law,
            self.target_missing_rate,
            self.sigma2,
            nu1=self.nu1,
            nu2=self.nu2,
            q=self.q,
        )

    @property
    def gamma(self) -> np.ndarray:
        return np.array([self.intercept, *self.gamma_slope])

    @property
    def cov(self) -> np.ndarray:
        rho_star = self.rho * math.sqrt(self.sigma2)
        return np.array([[self.sigma2, rho_star], [rho_star, 1.0]])

    def true_values(self, kind: ModelKind) -> dict[str, float]:
        """Generating values keyed like the rows of :meth:`FitResult.summary`"""
        gamma = self.gamma
        values = {f"beta_{name}": b for name, b in zip(X_NAMES, self.beta)}
        values |= {f"gamma_{name}": g for name, g in zip(W_NAMES, gamma)}
        values |= {"sigma2": self.sigma2, "rho": self.rho}
        if ModelKind(kind) == ModelKind.slcn and self.law == ErrorLaw.cn:
            values |= {"nu1": self.nu1, "nu2": self.nu2}
        return values


@lru_cache(maxsize=64)
def _selection_quantile(
    law: ErrorLaw, prob: float, nu1: float | None, nu2: float | None, q: float | None
) -> float:
    if law == ErrorLaw.normal:
        return float(special.ndtri(prob))
    if law == ErrorLaw.cn:
        return cn_quantile(prob, CnParams(mu=[0.0], sigma=[[1.0]], nu1=nu1, nu2=nu2))
    return slash_quantile(prob, q)


def calibrate_gamma0(
    law: ErrorLaw | str,
    target_missing_rate: float,
    sigma2: float = 1.0,
    nu1: float | None = None,
    nu2: float | None = None,
    q: float | None = None,
) -> float:
    """Selection intercept reaching the target missing rate

    The selection error has unit scale, so the intercept is the
    ``1 - target_missing_rate`` quantile of its marginal law, multiplied by
    `sigma2`; the default designs all use ``sigma2 = 1``.
    """
    if not 0 < target_missing_rate < 1:
        raise ValueError(
            f"Missing rate must lie in (0, 1), got {target_missing_rate}"
        )
    law = ErrorLaw(law)
    if law == ErrorLaw.cn and (nu1 is None or nu2 is None):
        raise ValueError("Contaminated-normal calibration needs `nu1` and `nu2`")
    if law == ErrorLaw.slash and q is None:
        raise ValueError("Slash calibration needs the tail parameter `q`")
    return sigma2 * _selection_quantile(law, 1 - target_missing_rate, nu1, nu2, q)


def generate_errors(
    design: SimDesign, rng: np.random.Generator, n: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Bivariate errors and their latent scale

    Returns
    -------
    tuple of numpy.ndarray
        Errors of shape ``(n, 2)``, and the latent ``U`` (CN: `nu2` or 1), the
        slash factor ``U**(-1/q)``, or ones for normal errors.
    """
    n = design.n if n is None else n
    if design.law == ErrorLaw.normal:
        return rng.multivariate_normal(np.zeros(2), design.cov, size=n), np.ones(n)
    if design.law == ErrorLaw.cn:
        params = CnParams(
            mu=[0.0, 0.0], sigma=design.cov, nu1=design.nu1, nu2=design.nu2
        )
        return cn_sample(rng, params, n)
    return slash_sample(rng, design.q, [0.0, 0.0], design.cov, n, return_scale=True)


def generate_dataset(design: SimDesign, rng: np.random.Generator) -> SelectionData:
    """One simulated sample; outcomes of unselected units are missing"""
    n = design.n
    w1 = rng.uniform(-1, 1, size=n)
    w2 = rng.standard_normal(n)
    ones = np.ones(n)
    w = np.column_stack([ones, w1, w2])
    x = np.column_stack([ones, w1])
    errors, _ = generate_errors(design, rng)
    y1 = x @ np.asarray(design.beta) + errors[:, 0]
    selected = w @ design.gamma + errors[:, 1] > 0
    return SelectionData(
        x=x,
        w=w,
        v1=np.where(selected, y1, np.nan),
        c=selected.astype(int),
        x_names=X_NAMES,
        w_names=W_NAMES,
    )


def design_grid(
    law: ErrorLaw | str,
    sizes=SAMPLE_SIZES,
    rates=MISSING_RATE_GRID,
    **kwargs,
) -> list[SimDesign]:
    """Designs over every combination of sample size and missing rate"""
    return [
        SimDesign(law=law, n=n, target_missing_rate=rate, **kwargs)
        for n in sizes
        for rate in rates
    ]


# ------------------------------------------------------------- Monte Carlo


class ParameterSummary(BaseModel):
    model: ModelKind
    parameter: str
    true: float | None = None
    em_mean: float
    sd_across_reps: float | None
    mean_info_se: float | None


class CriterionSummary(BaseModel):
    model: ModelKind
    aic_mean: float
    aic_sd: float | None
    bic_mean: float
    bic_sd: float | None


class McSummary(BaseModel):
    """Aggregated Monte Carlo results

    ``sd_across_reps`` is the standard deviation of the estimates over the
    replicates and ``mean_info_se`` the average information-based standard
    error. The spread is missing with fewer than two usable replicates.
    """

    model_config = ConfigDict(use_enum_values=False)

    design: SimDesign
    n_reps: int
    failed: dict[str, int]
    parameters: list[ParameterSummary]
    criteria: list[CriterionSummary]
    selection: dict[str, dict[str, float | None]]

    def to_frames(self) -> dict[str, pd.DataFrame]:
        parameters = pd.DataFrame([p.model_dump(mode="json") for p in self.parameters])
        criteria = pd.DataFrame([c.model_dump(mode="json") for c in self.criteria])
        selection = pd.DataFrame(
            [
                {"criterion": criterion, "model": model, "percent": percent}
                for criterion, shares in self.selection.items()
                for model, percent in shares.items()
            ]
        )
        return {"parameters": parameters, "criteria": criteria, "selection": selection}

    def write(self, directory: Path | str) -> list[Path]:
        """Write the tables as csv and the whole summary as json, missing
        values rendered as ``NA``"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, frame in self.to_frames().items():
            path = directory / f"{name}.csv"
            frame.to_csv(path, index=False, na_rep="NA", float_format="%.6f")
            written.append(path)
        path = directory / "summary.json"
        content = json.dumps(_missing_as_na(self.model_dump(mode="json")), indent=2)
        path.write_text(content, encoding="utf-8")
        written.append(path)
        return written


def _missing_as_na(value):
    if isinstance(value, dict):
        return {key: _missing_as_na(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_missing_as_na(item) for item in value]
    return "NA" if value is None else value


def _replicate(
    design: SimDesign,
    models: list[ModelKind],
    options: EcmOptions,
    seed: np.random.SeedSequence,
) -> dict[ModelKind, ReplicateFit | None]:
    rng = np.random.Generator(np.random.Philox(seed))
    data = generate_dataset(design, rng)
    results = {}
    for kind in models:
        try:
            theta, trace = fit(data, kind, options)
            if not trace.converged:
                logger.warning(f"{kind.value} fit of a replicate did not converge")
                results[kind] = None
                continue
            result = build_fit_result(data, theta, trace, kind)
        except (EstimationError, ValueError) as error:
            logger.warning(f"{kind.value} fit of a replicate failed: {error}")
            results[kind] = None
            continue
        table = result.summary().drop(index="sigma")
        results[kind] = ReplicateFit(table, result.aic, result.bic)
    return results


def _sd(values) -> float | None:
    values = np.asarray(values, dtype=float)
    return float(np.std(values, ddof=1)) if values.size >= 2 else None


def _mean(values) -> float | None:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    return float(np.mean(values)) if values.size else None


def run_monte_carlo(
    design: SimDesign,
    n_reps: int,
    models=(ModelKind.sln, ModelKind.slcn),
    options: EcmOptions | None = None,
    n_jobs: int = 1,
    seeds: list[int] | None = None,
) -> McSummary:
    """Fit every model to `n_reps` samples drawn from `design`

    Replicate ``r`` draws from the ``r``-th child of the design seed, or from
    ``seeds[r]`` when given, so results do not depend on `n_jobs`. Replicates
    where a model fails or does not converge are left out of that model's
    averages and counted in ``failed``; model selection uses the replicates
    where all models succeeded.
    """
    if n_reps < 1:
        raise ValueError(f"Need at least one replicate, got {n_reps}")
    models = [ModelKind(kind) for kind in models]
    options = options or EcmOptions()
    if seeds is not None:
        if len(seeds) != n_reps:
            raise ValueError(f"Expected {n_reps} seeds, got {len(seeds)}")
        streams = [np.random.SeedSequence(s) for s in seeds]
    else:
        streams = np.random.SeedSequence(design.seed).spawn(n_reps)

    logger.info(
        f"Running {n_reps} replicates of the {design.law.value} design with "
        f"n={design.n}"
    )
    jobs = ([design] * n_reps, [models] * n_reps, [options] * n_reps, streams)
    if n_jobs == 1:
        replicates = list(map(_replicate, *jobs))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as executor:
            replicates = list(executor.map(_replicate, *jobs))

    failed = {kind.value: sum(r[kind] is None for r in replicates) for kind in models}
    for kind, count in failed.items():
        if count:
            logger.warning(f"{count} of {n_reps} {kind} replicates excluded")

    parameters, criteria = [], []
    for kind in models:
        fits = [r[kind] for r in replicates if r[kind] is not None]
        if not fits:
            continue
        truth = design.true_values(kind)
        for name in fits[0].table.index:
            estimates = [f.table.loc[name, "estimate"] for f in fits]
            parameters.append(
                ParameterSummary(
                    model=kind,
                    parameter=name,
                    true=truth.get(name),
                    em_mean=float(np.mean(estimates)),
                    sd_across_reps=_sd(estimates),
                    mean_info_se=_mean([f.table.loc[name, "se"] for f in fits]),
                )
            )
        aic, bic = [f.aic for f in fits], [f.bic for f in fits]
        criteria.append(
            CriterionSummary(
                model=kind,
                aic_mean=float(np.mean(aic)),
                aic_sd=_sd(aic),
                bic_mean=float(np.mean(bic)),
                bic_sd=_sd(bic),
            )
        )

    complete = [r for r in replicates if all(r[kind] is not None for kind in models)]
    selection = {}
    for criterion in ("aic", "bic"):
        wins = {kind.value: 0 for kind in models}
        for r in complete:
            best = min(models, key=lambda kind: getattr(r[kind], criterion))
            wins[best.value] += 1
        selection[criterion] = {
            model: 100 * count / len(complete) if complete else None
            for model, count in wins.items()
        }
    return McSummary(
        design=design,
        n_reps=n_reps,
        failed=failed,
        parameters=parameters,
        criteria=criteria,
        selection=selection,
    )

import logging

import numpy as np

from selectcn.error import EstimabilityError, RankDeficiencyError
from selectcn.estimation.probit import probit_fit
from selectcn.model import SelectionData, Theta, lambda_cn

logger = logging.getLogger(__name__)

RHO_CLAMP = 0.99


def heckman_two_step(
    data: SelectionData, nu: tuple[float, float] | None = None
) -> Theta:
    """Two-step estimator of the normal selection model

    Step 1 fits the selection equation by probit. Step 2 regresses the observed
    outcomes on ``x`` and the inverse Mills ratio ``lambda(w'gamma)``; the Mills
    coefficient estimates ``rho * sigma``. The outcome variance is corrected for
    selection with ``delta = lambda * (lambda + w'gamma)``.

    Parameters
    ----------
    data : SelectionData
        Estimation sample.
    nu : tuple of float, optional
        Contamination pair attached to the result, which is then an SLcn
        starting value.

    Returns
    -------
    Theta
        Estimates with ``|rho|`` clamped to 0.99.
    """
    selected = data.selected
    if data.n_selected < data.p + 2:
        raise EstimabilityError(
            f"Two-step estimation needs at least {data.p + 2} selected units, "
            f"found {data.n_selected}"
        )
    gamma = probit_fit(data.w, data.c)
    index = data.w[selected] @ gamma
    mills = lambda_cn(index)

    design = np.column_stack([data.x[selected], mills])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficiencyError(
            "Outcome covariates augmented with the inverse Mills ratio are not of "
            "full column rank"
        )
    coef, *_ = np.linalg.lstsq(design, data.v1[selected], rcond=None)
    beta, beta_mills = coef[:-1], coef[-1]
    residuals = data.v1[selected] - design @ coef
    delta = mills * (mills + index)
    sigma2 = float(np.mean(residuals**2) + beta_mills**2 * np.mean(delta))
    rho = float(np.clip(beta_mills / np.sqrt(sigma2), -RHO_CLAMP, RHO_CLAMP))
    logger.debug(f"Two-step estimates: sigma2={sigma2:.4f}, rho={rho:.4f}")

    nu1, nu2 = nu if nu is not None else (None, None)
    return Theta(beta=beta, gamma=gamma, sigma2=sigma2, rho=rho, nu1=nu1, nu2=nu2)

import logging

import numpy as np
from scipy import special

from selectcn.error import (
    EstimabilityError,
    EstimationError,
    RankDeficiencyError,
    SeparationError,
)

logger = logging.getLogger(__name__)


def probit_loglik(gamma: np.ndarray, w: np.ndarray, c: np.ndarray) -> float:
    sign = 2 * c - 1
    return float(np.sum(special.log_ndtr(sign * (w @ gamma))))


def _score_and_hessian(gamma: np.ndarray, w: np.ndarray, c: np.ndarray):
    sign = 2 * c - 1
    index = sign * (w @ gamma)
    # generalised residual phi(q x'g) / Phi(q x'g), evaluated in log space
    mills = np.exp(-0.5 * index**2 - 0.5 * np.log(2 * np.pi) - special.log_ndtr(index))
    score = w.T @ (sign * mills)
    curvature = mills * (mills + index)
    hessian = -(w * curvature[:, np.newaxis]).T @ w
    return score, hessian


def probit_fit(
    w: np.ndarray, c: np.ndarray, tol: float = 1e-8, max_iter: int = 100
) -> np.ndarray:
    """Maximum-likelihood probit coefficients by Newton-Raphson

    Parameters
    ----------
    w : numpy.ndarray
        n x q covariate matrix.
    c : numpy.ndarray
        Binary outcomes.
    tol : float
        Convergence when the sup-norm of the score falls below `tol`.
    max_iter : int
        Maximum number of Newton steps.

    Returns
    -------
    numpy.ndarray
        Estimated coefficients.

    Raises
    ------
    SeparationError
        If the data are (quasi-)perfectly separated and the estimates diverge.
    """
    w = np.asarray(w, dtype=float)
    c = np.asarray(c).astype(int)
    if np.all(c == c[0]):
        raise EstimabilityError("Binary outcome is constant, probit not estimable")
    if np.linalg.matrix_rank(w) < w.shape[1]:
        raise RankDeficiencyError("Selection covariates are not of full column rank")

    gamma = np.zeros(w.shape[1])
    current = probit_loglik(gamma, w, c)
    for iteration in range(1, max_iter + 1):
        score, hessian = _score_and_hessian(gamma, w, c)
        if _separated(gamma, w, c):
            break
        if np.max(np.abs(score)) <= tol:
            logger.debug(f"Probit converged after {iteration - 1} Newton steps")
            return gamma
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            break
        # step halving keeps the log-likelihood increasing
        for _ in range(30):
            candidate = gamma - step
            value = probit_loglik(candidate, w, c)
            if value >= current - 1e-12:
                break
            step = step / 2
        gamma, current = candidate, value

    if _separated(gamma, w, c) or not np.all(np.isfinite(gamma)):
        logger.warning("Probit estimates diverge, the selection data are separated")
        raise SeparationError(
            "Selection indicator is perfectly predicted by the covariates "
            "(separation), probit estimates diverge"
        )
    raise EstimationError(f"Probit did not converge in {max_iter} Newton steps")


def _separated(gamma: np.ndarray, w: np.ndarray, c: np.ndarray) -> bool:
    index = (2 * c - 1) * (w @ gamma)
    # a hyperplane classifying every unit correctly means the MLE does not exist
    return bool(np.all(index > 0))

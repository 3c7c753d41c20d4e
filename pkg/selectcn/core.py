import logging
from typing import Any

from pydantic import validate_call

from selectcn.config import EcmOptions
from selectcn.estimation import fit
from selectcn.inference import FitResult, build_fit_result
from selectcn.model import ModelKind, SelectionData, Theta

logger = logging.getLogger(__name__)


@validate_call(config={"arbitrary_types_allowed": True})
def estimate(
    data: SelectionData,
    kind: ModelKind = ModelKind.slcn,
    options: EcmOptions | None = None,
    start: Theta | None = None,
    k_override: int | None = None,
    columns: dict[str, Any] | None = None,
) -> FitResult:
    """Fit a selection model and compute its inference in one step

    This function is the recommended way of using the selectcn package. It
    performs the following operations:

    * Starting values from the two-step estimator (or a grid over the
      contamination pair, or user-supplied values)
    * ECM iterations until the relative change of the log-likelihood falls
      below the tolerance
    * Standard errors from the empirical information matrix, AIC/BIC and the
      classification of units as outliers, inliers or good observations

    Parameters
    ----------
    data : :class:`SelectionData`
        Estimation sample.
    kind : :class:`ModelKind`, optional
        ``slcn`` (default) or ``sln``.
    options : :class:`EcmOptions`, optional
        Algorithm settings, defaults to ``EcmOptions()``.
    start : :class:`Theta`, optional
        Starting values, used with ``options.init = "user"``.
    k_override : int, optional
        Parameter count entering AIC and BIC instead of the free-parameter count.
    columns : dict, optional
        Description of the data columns, stored with the result.

    Returns
    -------
    :class:`FitResult`
        Estimates with standard errors and diagnostics; check
        :attr:`FitResult.converged`.

    Raises
    ------
    EstimationError
        If the algorithm breaks down numerically.
    """
    theta, trace = fit(data, kind, options, start)
    return build_fit_result(
        data, theta, trace, kind, k_override=k_override, columns=columns
    )

"""ECM estimation of the SLn and SLcn selection models

Each cycle computes the conditional expectations of the latent selection
variable, the missing outcomes and the contamination indicator given the
observed data (E-step), then maximises the expected complete-data
log-likelihood in three conditional blocks: the regression coefficients, the
scale matrix and the contamination pair (CM-steps).
"""

import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special

from selectcn.config import EcmOptions, InitMethod
from selectcn.distributions import norm_logpdf
from selectcn.error import (
    AscentError,
    DomainError,
    EstimationError,
    NonFiniteLikelihoodError,
    SingularSystemError,
    ZeroMassError,
)
from selectcn.estimation.twostep import heckman_two_step
from selectcn.model import (
    ModelKind,
    SelectionData,
    Theta,
    check_rho,
    loglik,
    resolve_kind,
)
from selectcn.moments import halfplane_moments, truncnorm_moments

logger = logging.getLogger(__name__)

NU1_CLIP = 1e-6
NU2_CAP = 1 - 1e-6
ASCENT_SLACK = 1e-8
PILOT_FAILURES = (
    EstimationError,
    DomainError,
    ZeroMassError,
    NonFiniteLikelihoodError,
)


class EStepQuantities(BaseModel):
    """Conditional expectations of one E-step, stacked over units

    Attributes
    ----------
    y_hat : numpy.ndarray
        n x 2, ``E[Y | data]``.
    y2_hat : numpy.ndarray
        n x 2 x 2, ``E[Y Y' | data]``.
    eps_hat : numpy.ndarray
        Posterior probability that a unit stems from the inflated component.
    epsy_hat, epsy2_hat : numpy.ndarray
        ``E[Z Y | data]`` and ``E[Z Y Y' | data]`` for the component indicator Z.
    loglik_contributions : numpy.ndarray
        Observed-data log-likelihood contributions at the same parameters.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: ModelKind
    y_hat: np.ndarray
    y2_hat: np.ndarray
    eps_hat: np.ndarray
    epsy_hat: np.ndarray
    epsy2_hat: np.ndarray
    loglik_contributions: np.ndarray

    @property
    def n(self) -> int:
        return self.eps_hat.shape[0]

    @staticmethod
    def _centred(first, second, weight, mu):
        cross = np.einsum("ni,nj->nij", first, mu)
        outer = np.einsum("ni,nj->nij", mu, mu)
        return second - cross - cross.transpose(0, 2, 1) + weight[:, None, None] * outer

    def e1(self, mu: np.ndarray) -> np.ndarray:
        """``E[(Y - mu)(Y - mu)']`` per unit"""
        return self._centred(self.y_hat, self.y2_hat, np.ones(self.n), mu)

    def e2(self, mu: np.ndarray) -> np.ndarray:
        """``E[Z (Y - mu)(Y - mu)']`` per unit"""
        return self._centred(self.epsy_hat, self.epsy2_hat, self.eps_hat, mu)

    def gamma(self, mu: np.ndarray, nu2: float) -> np.ndarray:
        """Scale-weighted cross moments ``E1 + (nu2 - 1) E2``"""
        if self.kind == ModelKind.sln:
            return self.e1(mu)
        return self.e1(mu) + (nu2 - 1) * self.e2(mu)


class EcmTrace(BaseModel):
    """Record of an ECM run"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    loglik_path: list[float] = Field(default_factory=list)
    theta_path: list[Theta] = Field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    flags: list[str] = Field(default_factory=list)
    init: str = InitMethod.two_step.value
    nu_start: tuple[float, float] | None = None


def location(theta: Theta, data: SelectionData) -> np.ndarray:
    """n x 2 matrix of ``(x'beta, w'gamma)``"""
    return np.column_stack([data.x @ theta.beta, data.w @ theta.gamma])


def _components(theta: Theta, kind: ModelKind) -> list[tuple[float, float]]:
    """``(log weight, variance inflation)`` of the normal components, the
    inflated component first"""
    if kind == ModelKind.sln:
        return [(0.0, 1.0)]
    return [
        (math.log(theta.nu1), 1 / theta.nu2),
        (math.log1p(-theta.nu1), 1.0),
    ]


def _on_subset(moments, units: np.ndarray, *args):
    try:
        return moments(*args)
    except ZeroMassError as error:
        unit = None if error.unit is None else int(units[error.unit])
        raise ZeroMassError(
            f"Truncation region of unit {unit} has zero probability mass", unit=unit
        ) from error


def e_step(
    theta: Theta, data: SelectionData, kind: ModelKind | None = None
) -> EStepQuantities:
    """Conditional expectations given the observed data at `theta`

    For an unselected unit the pair ``(Y1, Y2)`` is a CN mixture truncated to
    ``Y2 <= 0``; for a selected unit ``Y1`` is observed and only ``Y2`` given
    ``Y1`` is truncated to ``[0, inf)``. Within each normal component the
    moments are those of a truncated normal, and the components are weighted by
    their posterior probabilities.

    Raises
    ------
    ZeroMassError
        If a unit's truncation region carries no probability mass under some
        component; ``unit`` is the row index in `data`.
    """
    kind = resolve_kind(theta, kind)
    check_rho(theta)
    n = data.n
    mu = location(theta, data)
    sel = data.selected
    sel_units, cens_units = np.flatnonzero(sel), np.flatnonzero(~sel)
    xb_s, wg_s = mu[sel, 0], mu[sel, 1]
    xb_c, wg_c = mu[~sel, 0], mu[~sel, 1]
    v = data.v1[sel]
    sigma2, rho_star = theta.sigma2, theta.rho_star
    mu_t = wg_s + theta.rho / theta.sigma * (v - xb_s)
    var_t = 1 - theta.rho**2

    log_weights, firsts, seconds = [], [], []
    for log_w, scale in _components(theta, kind):
        log_a = np.empty(n)
        first = np.empty((n, 2))
        second = np.empty((n, 2, 2))

        log_mass, e_f, e_t, e_ff, e_ft, e_tt = _on_subset(
            halfplane_moments,
            cens_units,
            xb_c,
            wg_c,
            scale * sigma2,
            scale * rho_star,
            scale,
            -np.inf,
            0.0,
        )
        log_a[~sel] = log_w + log_mass
        first[~sel] = np.column_stack([e_f, e_t])
        second[~sel] = np.stack(
            [np.column_stack([e_ff, e_ft]), np.column_stack([e_ft, e_tt])], axis=1
        )

        log_mass, m1, m2 = _on_subset(
            truncnorm_moments, sel_units, mu_t, scale * var_t, 0.0, np.inf
        )
        log_a[sel] = log_w + norm_logpdf(v, xb_s, scale * sigma2) + log_mass
        first[sel] = np.column_stack([v, m1])
        second[sel] = np.stack(
            [np.column_stack([v * v, v * m1]), np.column_stack([v * m1, m2])], axis=1
        )

        log_weights.append(log_a)
        firsts.append(first)
        seconds.append(second)

    log_weights = np.asarray(log_weights)
    contributions = special.logsumexp(log_weights, axis=0)
    posterior = np.exp(log_weights - contributions)
    y_hat = np.einsum("kn,kni->ni", posterior, np.asarray(firsts))
    y2_hat = np.einsum("kn,knij->nij", posterior, np.asarray(seconds))
    # observed coordinates are exact, not mixture averages
    y_hat[sel, 0] = v
    y2_hat[sel, 0, 0] = v * v

    if kind == ModelKind.sln:
        eps_hat = np.zeros(n)
        epsy_hat, epsy2_hat = np.zeros((n, 2)), np.zeros((n, 2, 2))
    else:
        eps_hat = np.clip(posterior[0], 0.0, 1.0)
        epsy_hat = eps_hat[:, None] * firsts[0]
        epsy2_hat = eps_hat[:, None, None] * seconds[0]
    return EStepQuantities(
        kind=kind,
        y_hat=y_hat,
        y2_hat=y2_hat,
        eps_hat=eps_hat,
        epsy_hat=epsy_hat,
        epsy2_hat=epsy2_hat,
        loglik_contributions=contributions,
    )


def design_blocks(data: SelectionData) -> np.ndarray:
    """n x 2 x (p + q) block-diagonal design, ``mu_i = X_i (beta, gamma)``"""
    blocks = np.zeros((data.n, 2, data.p + data.q))
    blocks[:, 0, : data.p] = data.x
    blocks[:, 1, data.p :] = data.w
    return blocks


def q_function(
    theta: Theta,
    q: EStepQuantities,
    data: SelectionData,
    kind: ModelKind | None = None,
) -> float:
    """Expected complete-data log-likelihood ``Q(theta | theta_old)``, where `q`
    holds the expectations under ``theta_old``"""
    kind = resolve_kind(theta, kind)
    mu = location(theta, data)
    precision = np.linalg.inv(theta.cov)
    log_det = math.log(theta.psi)
    value = -data.n * (math.log(2 * math.pi) + 0.5 * log_det)
    value -= 0.5 * np.einsum("nij,ji->", q.e1(mu), precision)
    if kind == ModelKind.slcn:
        nu1, nu2 = theta.nu
        eps = q.eps_hat
        value += np.sum(eps * math.log(nu1) + (1 - eps) * math.log1p(-nu1))
        value += np.sum(eps) * math.log(nu2)
        value -= 0.5 * (nu2 - 1) * np.einsum("nij,ji->", q.e2(mu), precision)
    return float(value)


def cm_step(
    q: EStepQuantities,
    data: SelectionData,
    theta_old: Theta,
    kind: ModelKind | None = None,
    fix_nu: bool = False,
) -> tuple[Theta, list[str]]:
    """Conditional maximisation of ``Q`` in the order coefficients, scale,
    contamination pair

    Returns
    -------
    tuple
        Updated parameters and the names of any bounds that were applied.

    Raises
    ------
    SingularSystemError
        If the weighted normal equations of the coefficients are singular.
    """
    kind = resolve_kind(theta_old, kind)
    flags = []
    nu2_old = theta_old.nu[1]
    precision = np.linalg.inv(theta_old.cov)

    # coefficients by weighted GLS at the old scale matrix and nu2
    blocks = design_blocks(data)
    if kind == ModelKind.sln:
        weight, target = np.ones(data.n), q.y_hat
    else:
        weight = 1 + (nu2_old - 1) * q.eps_hat
        target = q.y_hat + (nu2_old - 1) * q.epsy_hat
    lhs = np.einsum("nak,ab,nbl,n->kl", blocks, precision, blocks, weight)
    rhs = np.einsum("nak,ab,nb->k", blocks, precision, target)
    try:
        coef = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as error:
        raise SingularSystemError(
            "Weighted normal equations of the regression coefficients are singular"
        ) from error
    if not np.all(np.isfinite(coef)):
        raise SingularSystemError("Non-finite regression coefficients in CM-step")
    beta, gamma = coef[: data.p], coef[data.p :]

    # scale matrix given the new coefficients, selection variance fixed at one
    mu = np.column_stack([data.x @ beta, data.w @ gamma])
    cross = q.gamma(mu, nu2_old)
    off_diagonal = cross[:, 0, 1] + cross[:, 1, 0]
    rho_star = float(np.sum(off_diagonal) / (2 * np.sum(cross[:, 1, 1])))
    psi = float(
        np.mean(cross[:, 0, 0] - rho_star * off_diagonal + rho_star**2 * cross[:, 1, 1])
    )
    if not psi > 0:
        raise DomainError(f"Non-positive conditional outcome variance {psi}")

    if kind == ModelKind.sln:
        return Theta.from_reparameterization(beta, gamma, psi, rho_star), flags
    if fix_nu:
        return (
            Theta.from_reparameterization(
                beta, gamma, psi, rho_star, theta_old.nu1, theta_old.nu2
            ),
            flags,
        )

    nu1 = float(np.mean(q.eps_hat))
    if not NU1_CLIP <= nu1 <= 1 - NU1_CLIP:
        logger.warning(f"Mixing proportion {nu1:.3g} clipped into the open interval")
        nu1 = float(np.clip(nu1, NU1_CLIP, 1 - NU1_CLIP))
        flags.append("nu1_clipped")

    new_precision = np.linalg.inv(
        np.array([[psi + rho_star**2, rho_star], [rho_star, 1.0]])
    )
    spread = np.einsum("nij,ji->", q.e2(mu), new_precision)
    total = float(np.sum(q.eps_hat))
    nu2 = 2 * total / spread if spread > 0 else np.inf
    if nu2 > NU2_CAP:
        logger.debug(f"Scale factor {nu2:.6g} capped at {NU2_CAP}")
        nu2 = NU2_CAP
        flags.append("nu2_clipped")
    nu2 = max(nu2, NU1_CLIP)
    return Theta.from_reparameterization(beta, gamma, psi, rho_star, nu1, nu2), flags


def _converged(previous: float, current: float, tol: float) -> bool:
    change = abs(current - previous)
    return change < tol * abs(previous) and change <= tol * (1 + abs(current))


def _iterate(
    data: SelectionData,
    kind: ModelKind,
    theta: Theta,
    tol: float,
    max_iter: int,
    fix_nu: bool = False,
    keep_path: bool = False,
) -> tuple[Theta, EcmTrace]:
    current = loglik(theta, data, kind)
    trace = EcmTrace(loglik_path=[current])
    if keep_path:
        trace.theta_path.append(theta)
    for iteration in range(1, max_iter + 1):
        q = e_step(theta, data, kind)
        theta, flags = cm_step(q, data, theta, kind, fix_nu=fix_nu)
        value = loglik(theta, data, kind)
        trace.flags += [f"iteration {iteration}: {flag}" for flag in flags]
        if value < current - (ASCENT_SLACK + 1e-12 * abs(current)):
            raise AscentError(
                f"Log-likelihood decreased from {current:.10g} to {value:.10g} "
                f"in iteration {iteration}"
            )
        trace.loglik_path.append(value)
        if keep_path:
            trace.theta_path.append(theta)
        trace.iterations = iteration
        if _converged(current, value, tol):
            trace.converged = True
            break
        current = value
    return theta, trace


def _start(
    data: SelectionData, kind: ModelKind, options: EcmOptions, start: Theta | None
) -> Theta:
    nu = options.fix_nu or options.nu_init
    if options.init == InitMethod.user:
        if start is None:
            raise ValueError("User initialisation needs starting values")
        if kind == ModelKind.sln:
            return start.as_sln()
        if start.nu1 is None or options.fix_nu is not None:
            return start.with_nu(*nu)
        return start
    return heckman_two_step(data, nu=nu if kind == ModelKind.slcn else None)


def _grid_start(data: SelectionData, base: Theta, options: EcmOptions) -> Theta:
    best, best_loglik = None, -np.inf
    for pair in options.nu_grid:
        try:
            pilot = base.with_nu(*pair)
            theta, trace = _iterate(
                data, ModelKind.slcn, pilot, options.tol, options.grid_iter
            )
        except PILOT_FAILURES as e:
            logger.warning(f"Pilot run from (nu1, nu2) = {pair} failed: {e}")
            continue
        final = trace.loglik_path[-1]
        logger.debug(f"Pilot run from {pair}: log-likelihood {final:.6f}")
        if final > best_loglik:
            best, best_loglik = theta, final
    if best is None:
        raise EstimationError("Every pilot run of the grid initialisation failed")
    return best


def fit(
    data: SelectionData,
    kind: ModelKind = ModelKind.slcn,
    options: EcmOptions | None = None,
    start: Theta | None = None,
) -> tuple[Theta, EcmTrace]:
    """Maximum-likelihood fit by the ECM algorithm

    Parameters
    ----------
    data : SelectionData
        Estimation sample.
    kind : ModelKind
        ``sln`` runs the normal algorithm without contamination terms.
    options : EcmOptions, optional
        Tolerance, iteration limit and initialisation.
    start : Theta, optional
        Starting values when ``options.init`` is ``user``.

    Returns
    -------
    tuple
        Estimates and the :class:`EcmTrace`; ``trace.converged`` is False when
        `max_iter` was reached first.

    Raises
    ------
    AscentError
        If the log-likelihood decreases between iterations.
    """
    kind = ModelKind(kind)
    options = options or EcmOptions()
    theta = _start(data, kind, options, start)
    init = options.init
    if init == InitMethod.grid:
        if kind == ModelKind.sln or options.fix_nu is not None:
            logger.info("Grid initialisation applies to free SLcn fits only")
            init = InitMethod.two_step
        else:
            theta = _grid_start(data, theta, options)
    nu_start = theta.nu if kind == ModelKind.slcn else None

    fixed = kind == ModelKind.slcn and options.fix_nu is not None
    theta, trace = _iterate(
        data,
        kind,
        theta,
        options.tol,
        options.max_iter,
        fix_nu=fixed,
        keep_path=options.keep_path,
    )
    trace.init, trace.nu_start = init.value, nu_start
    if trace.converged:
        logger.info(
            f"{kind.value} fit converged after {trace.iterations} iterations, "
            f"log-likelihood {trace.loglik_path[-1]:.6f}"
        )
    else:
        logger.warning(
            f"{kind.value} fit did not converge in {options.max_iter} iterations"
        )
    return theta, trace

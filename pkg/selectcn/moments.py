"""First and second moments of truncated normal and truncated contaminated-normal
(TCN) distributions in one and two dimensions."""

import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import special

from selectcn.distributions import (
    CnParams,
    TruncRegion,
    _interval_prob,
    binorm_rect,
    cn_conditional,
    norm_logpdf,
)
from selectcn.error import ZeroMassError

logger = logging.getLogger(__name__)

# regions whose mass falls below 1e-300 are treated as empty
LOG_MASS_FLOOR = math.log(1e-300)


class TruncMoments(BaseModel):
    """Mass, mean vector and second-moment matrix of a truncated distribution"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    m0: float
    m1: np.ndarray
    m2: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.m2 - np.outer(self.m1, self.m1)


class WeightedMoments(BaseModel):
    """Moments ``E[weight * Y**(k)]`` for k = 0, 1, 2"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    k0: float
    k1: np.ndarray
    k2: np.ndarray


class TcnMoments(BaseModel):
    """Moments of a TCN variable Y and of its two Gaussian building blocks

    Attributes
    ----------
    y : TruncMoments
        Moments of Y, with ``m0`` the CN mass of the region.
    inflated, base : TruncMoments
        Moments of the truncated normals with scale ``sigma / nu2`` and ``sigma``.
    nu2_weighted : WeightedMoments
        ``E[P * Y**(k)]`` where P is the posterior weight of the inflated
        component.
    u_weighted : WeightedMoments
        ``E[(nu2 * P + (1 - P)) * Y**(k)]``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y: TruncMoments
    inflated: TruncMoments
    base: TruncMoments
    nu2_weighted: WeightedMoments
    u_weighted: WeightedMoments


class TcnConditionalMoments(BaseModel):
    """Moments of the second TCN coordinate given the first one

    ``a_nu2`` and ``a_1`` are the unnormalised weights of the two truncated
    conditional components; ``y`` holds ``E[Y2**(k) | Y1]`` and the weighted
    blocks follow :class:`TcnMoments`.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    omega: float
    a_nu2: float
    a_1: float
    y: WeightedMoments
    inflated: TruncMoments
    base: TruncMoments
    nu2_weighted: WeightedMoments
    u_weighted: WeightedMoments


def log_interval_mass(alpha, beta):
    """``log(Phi(beta) - Phi(alpha))`` evaluated in the tail that keeps precision"""
    alpha, beta = np.broadcast_arrays(
        np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = special.log_ndtr(-alpha) + np.log1p(
            -np.exp(special.log_ndtr(-beta) - special.log_ndtr(-alpha))
        )
        lower = special.log_ndtr(beta) + np.log1p(
            -np.exp(special.log_ndtr(alpha) - special.log_ndtr(beta))
        )
    return np.where(alpha > 0, upper, lower)


def _times_ratio(bound, ratio):
    # bound * ratio vanishes at infinite bounds
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(bound), bound * ratio, 0.0)


def truncnorm_moments(mu, sigma2, lower, upper):
    """Vectorised truncated-normal moments through Mills-ratio identities

    Parameters
    ----------
    mu, sigma2 : array_like
        Mean and variance of the untruncated normal.
    lower, upper : array_like
        Truncation bounds, possibly infinite.

    Returns
    -------
    tuple of numpy.ndarray
        ``(log_mass, E[W], E[W**2])``.

    Raises
    ------
    ZeroMassError
        If any region carries mass below 1e-300; ``unit`` names the first
        offending element.
    """
    mu, sigma2, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu, sigma2, lower, upper))
    )
    scale = np.sqrt(sigma2)
    alpha, beta = (lower - mu) / scale, (upper - mu) / scale
    log_mass = log_interval_mass(alpha, beta)
    empty = ~(log_mass >= LOG_MASS_FLOOR)
    if np.any(empty):
        unit = int(np.flatnonzero(empty.ravel())[0]) if empty.ndim else None
        raise ZeroMassError("Truncation region has zero probability mass", unit=unit)
    ratio_a = np.exp(norm_logpdf(alpha) - log_mass)
    ratio_b = np.exp(norm_logpdf(beta) - log_mass)
    shift = ratio_a - ratio_b
    centred = sigma2 * (1 + _times_ratio(alpha, ratio_a) - _times_ratio(beta, ratio_b))
    mean = mu + scale * shift
    second = centred + 2 * mu * scale * shift + mu * mu
    return log_mass, mean, second


def tn_moments_1d(mu: float, sigma2: float, region: TruncRegion) -> TruncMoments:
    """Moments of a univariate normal truncated to `region`"""
    if region.dim != 1:
        raise ValueError("tn_moments_1d needs a univariate region")
    log_mass, m1, m2 = truncnorm_moments(mu, sigma2, region.lower[0], region.upper[0])
    return TruncMoments(
        m0=float(np.exp(log_mass)),
        m1=np.array([float(m1)]),
        m2=np.array([[float(m2)]]),
    )


def halfplane_moments(mu_f, mu_t, s_ff, s_ft, s_tt, lower_t, upper_t):
    """Moments of a bivariate normal truncated in one coordinate only

    The truncated coordinate ``t`` is handled univariately; the free coordinate
    ``f`` follows from the Gaussian regression ``E[X_f | X_t] = a + b X_t``.
    All arguments broadcast, so this serves one unit or a whole sample.

    Returns
    -------
    tuple of numpy.ndarray
        ``(log_mass, E[X_f], E[X_t], E[X_f**2], E[X_f X_t], E[X_t**2])``.
    """
    log_mass, e_t, e_tt = truncnorm_moments(mu_t, s_tt, lower_t, upper_t)
    slope = s_ft / s_tt
    intercept = mu_f - slope * mu_t
    residual = s_ff - slope * s_ft
    e_f = intercept + slope * e_t
    e_ft = intercept * e_t + slope * e_tt
    e_ff = residual + intercept**2 + 2 * intercept * slope * e_t + slope**2 * e_tt
    return log_mass, e_f, e_t, e_ff, e_ft, e_tt


def _rectangle_moments(mu: np.ndarray, sigma: np.ndarray, region: TruncRegion):
    """Bivariate truncated moments from the first/second-moment boundary
    recurrences, for arbitrary rectangles"""
    mass = binorm_rect(region, mu, sigma)
    if not mass >= 1e-300:
        raise ZeroMassError("Truncation region has zero probability mass")
    a, b = region.lower - mu, region.upper - mu
    density = _centred_bvn_pdf(sigma)

    def marginal_term(k: int, x: float) -> float:
        if not np.isfinite(x):
            return 0.0
        q = 1 - k
        slope = sigma[q, k] / sigma[k, k]
        spread = math.sqrt(sigma[q, q] - slope * sigma[q, k])
        inside = _interval_prob(
            (a[q] - slope * x) / spread, (b[q] - slope * x) / spread
        )
        return float(np.exp(norm_logpdf(x, 0.0, sigma[k, k]))) * float(inside) / mass

    def joint_term(k: int, x: float, y: float) -> float:
        if not (np.isfinite(x) and np.isfinite(y)):
            return 0.0
        point = (x, y) if k == 0 else (y, x)
        return density(*point) / mass

    f_a = np.array([marginal_term(k, a[k]) for k in (0, 1)])
    f_b = np.array([marginal_term(k, b[k]) for k in (0, 1)])
    m1 = sigma @ (f_a - f_b)

    edge = np.array(
        [_times_ratio(a[k], f_a[k]) - _times_ratio(b[k], f_b[k]) for k in (0, 1)],
        dtype=float,
    )
    m2 = sigma.copy()
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                q = 1 - k
                m2[i, j] += sigma[i, k] * sigma[j, k] * edge[k] / sigma[k, k]
                corner = (
                    joint_term(k, a[k], a[q])
                    - joint_term(k, a[k], b[q])
                    - joint_term(k, b[k], a[q])
                    + joint_term(k, b[k], b[q])
                )
                m2[i, j] += (
                    sigma[i, k]
                    * (sigma[j, q] - sigma[k, q] * sigma[j, k] / sigma[k, k])
                    * corner
                )
    mean = mu + m1
    second = m2 + np.outer(mu, m1) + np.outer(m1, mu) + np.outer(mu, mu)
    return mass, mean, (second + second.T) / 2


def _centred_bvn_pdf(sigma: np.ndarray):
    det = sigma[0, 0] * sigma[1, 1] - sigma[0, 1] ** 2
    inverse = np.array([[sigma[1, 1], -sigma[0, 1]], [-sigma[0, 1], sigma[0, 0]]]) / det
    norm = 1 / (2 * math.pi * math.sqrt(det))

    def pdf(x: float, y: float) -> float:
        point = np.array([x, y])
        return norm * math.exp(-0.5 * point @ inverse @ point)

    return pdf


def tn_moments_2d(
    mu,
    sigma,
    region: TruncRegion,
    method: Literal["auto", "recurrence"] = "auto",
) -> TruncMoments:
    """Moments of a bivariate normal truncated to a rectangle

    Half-planes (one coordinate unbounded) use the exact conditional
    decomposition; other rectangles, or ``method="recurrence"``, use the
    boundary recurrences.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if region.dim != 2 or mu.shape != (2,) or sigma.shape != (2, 2):
        raise ValueError("tn_moments_2d needs a bivariate region, mean and covariance")
    if np.linalg.det(sigma) <= 0 or np.any(np.diag(sigma) <= 0):
        raise ValueError("Covariance matrix must be positive definite")

    if region.is_full:
        return TruncMoments(m0=1.0, m1=mu.copy(), m2=sigma + np.outer(mu, mu))

    free = [
        j
        for j in (0, 1)
        if np.isneginf(region.lower[j]) and np.isposinf(region.upper[j])
    ]
    if method == "auto" and free:
        f = free[0]
        t = 1 - f
        log_mass, e_f, e_t, e_ff, e_ft, e_tt = halfplane_moments(
            mu[f],
            mu[t],
            sigma[f, f],
            sigma[f, t],
            sigma[t, t],
            region.lower[t],
            region.upper[t],
        )
        m1 = np.empty(2)
        m1[f], m1[t] = e_f, e_t
        m2 = np.empty((2, 2))
        m2[f, f], m2[t, t] = e_ff, e_tt
        m2[f, t] = m2[t, f] = e_ft
        return TruncMoments(m0=float(np.exp(log_mass)), m1=m1, m2=m2)

    mass, m1, m2 = _rectangle_moments(mu, sigma, region)
    return TruncMoments(m0=mass, m1=m1, m2=m2)


def tn_moments(mu, sigma, region: TruncRegion) -> TruncMoments:
    """Dispatch to the univariate or bivariate truncated-normal moments"""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if region.dim == 1:
        return tn_moments_1d(float(np.atleast_1d(mu)[0]), float(sigma[0, 0]), region)
    return tn_moments_2d(mu, sigma, region)


def tcn_moments(p: CnParams, region: TruncRegion) -> TcnMoments:
    """Moments of a CN variable truncated to `region`

    Y is a mixture of ``W_nu2 ~ TN(mu, sigma / nu2)`` and ``W_1 ~ TN(mu, sigma)``
    with weights proportional to the component masses of the region.
    """
    if region.dim != p.dim:
        raise ValueError("Region and CN parameters differ in dimension")
    inflated = tn_moments(p.mu, p.sigma / p.nu2, region)
    base = tn_moments(p.mu, p.sigma, region)
    mass = p.nu1 * inflated.m0 + (1 - p.nu1) * base.m0
    if not mass >= 1e-300:
        raise ZeroMassError("Truncation region has zero CN probability mass")
    share = p.nu1 * inflated.m0 / mass

    y = TruncMoments(
        m0=mass,
        m1=share * inflated.m1 + (1 - share) * base.m1,
        m2=share * inflated.m2 + (1 - share) * base.m2,
    )
    nu2_weighted = WeightedMoments(
        k0=share, k1=share * inflated.m1, k2=share * inflated.m2
    )
    rest = (1 - p.nu2) * (1 - share)
    u_weighted = WeightedMoments(
        k0=p.nu2 + rest,
        k1=p.nu2 * y.m1 + rest * base.m1,
        k2=p.nu2 * y.m2 + rest * base.m2,
    )
    return TcnMoments(
        y=y,
        inflated=inflated,
        base=base,
        nu2_weighted=nu2_weighted,
        u_weighted=u_weighted,
    )


def tcn_conditional_moments(
    p: CnParams, x1: float, region2: TruncRegion
) -> TcnConditionalMoments:
    """Moments of the second coordinate of a bivariate CN truncated to
    `region2`, given that the first coordinate equals `x1`"""
    if p.dim != 2 or region2.dim != 1:
        raise ValueError("Needs bivariate CN parameters and a univariate region")
    conditional = cn_conditional(x1, p)
    omega = conditional.nu1
    location, scale = conditional.mu[0], conditional.sigma[0, 0]
    inflated = tn_moments_1d(location, scale / p.nu2, region2)
    base = tn_moments_1d(location, scale, region2)
    a_nu2 = omega * inflated.m0
    a_1 = (1 - omega) * base.m0
    if not a_nu2 + a_1 >= 1e-300:
        raise ZeroMassError("Conditional truncation region has zero probability mass")
    share = a_nu2 / (a_nu2 + a_1)

    def mix(w_inflated: float, w_base: float) -> WeightedMoments:
        return WeightedMoments(
            k0=w_inflated + w_base,
            k1=w_inflated * inflated.m1 + w_base * base.m1,
            k2=w_inflated * inflated.m2 + w_base * base.m2,
        )

    return TcnConditionalMoments(
        omega=omega,
        a_nu2=a_nu2,
        a_1=a_1,
        y=mix(share, 1 - share),
        inflated=inflated,
        base=base,
        nu2_weighted=mix(share, 0.0),
        u_weighted=mix(p.nu2 * share, 1 - share),
    )

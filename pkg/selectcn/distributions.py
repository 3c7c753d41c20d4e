"""Density and probability kernels for the normal, contaminated-normal (CN),
extended skew contaminated-normal (ESCN) and slash families.

The CN law with location ``mu``, scale matrix ``sigma``, mixing proportion
``nu1`` and degree of contamination ``nu2`` has density

    nu1 * phi(x | mu, sigma / nu2) + (1 - nu1) * phi(x | mu, sigma)

and is the law of ``mu + U**-0.5 * Z`` with ``Z ~ N(0, sigma)`` and
``P(U = nu2) = nu1``, ``P(U = 1) = 1 - nu1``.
"""

import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, optimize, special, stats

from selectcn.error import DomainError

logger = logging.getLogger(__name__)

# Gauss-Legendre half-rules (6, 12 and 20 points) used by the bivariate normal
# orthant algorithm, keyed by the range of the correlation they serve
GAUSS_LEGENDRE = {
    6: (
        np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970]),
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    ),
    12: (
        np.array(
            [
                -0.9815606342467191,
                -0.9041172563704750,
                -0.7699026741943050,
                -0.5873179542866171,
                -0.3678314989981802,
                -0.1252334085114692,
            ]
        ),
        np.array(
            [
                0.04717533638651177,
                0.1069393259953183,
                0.1600783285433464,
                0.2031674267230659,
                0.2334925365383547,
                0.2491470458134029,
            ]
        ),
    ),
    20: (
        np.array(
            [
                -0.9931285991850949,
                -0.9639719272779138,
                -0.9122344282513259,
                -0.8391169718222188,
                -0.7463319064601508,
                -0.6360536807265150,
                -0.5108670019508271,
                -0.3737060887154196,
                -0.2277858511416451,
                -0.07652652113349733,
            ]
        ),
        np.array(
            [
                0.01761400713915212,
                0.04060142980038694,
                0.06267204833410906,
                0.08327674157670475,
                0.1019301198172404,
                0.1181945319615184,
                0.1316886384491766,
                0.1420961093183821,
                0.1491729864726037,
                0.1527533871307259,
            ]
        ),
    ),
}

TWO_PI = 2 * math.pi


def _as_vector(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=float))


def _as_matrix(value) -> np.ndarray:
    return np.atleast_2d(np.asarray(value, dtype=float))


class CnParams(BaseModel):
    """Parameters of a univariate or bivariate contaminated-normal distribution

    Attributes
    ----------
    mu : numpy.ndarray
        Location vector of length 1 or 2.
    sigma : numpy.ndarray
        Symmetric positive-definite scale matrix of matching dimension.
    nu1 : float
        Mixing proportion of the inflated component, in (0, 1).
    nu2 : float
        Degree of contamination, in (0, 1); the inflated component has scale
        matrix ``sigma / nu2``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mu: np.ndarray
    sigma: np.ndarray
    nu1: float = Field(gt=0, lt=1)
    nu2: float = Field(gt=0, lt=1)

    @field_validator("mu", mode="before")
    @classmethod
    def cast_mu(cls, v) -> np.ndarray:
        return _as_vector(v)

    @field_validator("sigma", mode="before")
    @classmethod
    def cast_sigma(cls, v) -> np.ndarray:
        return _as_matrix(v)

    @model_validator(mode="after")
    def check_scale_matrix(self) -> "CnParams":
        dim = self.mu.shape[0]
        if dim not in (1, 2):
            raise ValueError(f"Only univariate and bivariate CN supported, got {dim}")
        if self.sigma.shape != (dim, dim):
            raise ValueError(
                f"Scale matrix of shape {self.sigma.shape} does not match "
                f"location of length {dim}"
            )
        if not np.allclose(self.sigma, self.sigma.T, rtol=0, atol=1e-12):
            raise ValueError("Scale matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(self.sigma) <= 0):
            raise ValueError("Scale matrix must be positive definite")
        return self

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def components(self) -> list[tuple[float, np.ndarray]]:
        """Mixture weights and scale matrices, inflated component first"""
        return [(self.nu1, self.sigma / self.nu2), (1 - self.nu1, self.sigma)]


class TruncRegion(BaseModel):
    """Hyper-rectangle ``lower <= x <= upper`` with possibly infinite bounds"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lower: np.ndarray
    upper: np.ndarray

    @field_validator("lower", "upper", mode="before")
    @classmethod
    def cast_bounds(cls, v) -> np.ndarray:
        return _as_vector(v)

    @model_validator(mode="after")
    def check_bounds(self) -> "TruncRegion":
        if self.lower.shape != self.upper.shape:
            raise ValueError("Lower and upper bounds must have the same length")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("Region bounds must not be NaN")
        if np.any(self.lower >= self.upper):
            raise ValueError(
                f"Empty region: lower {self.lower.tolist()} must be below "
                f"upper {self.upper.tolist()}"
            )
        return self

    @classmethod
    def full(cls, dim: int) -> "TruncRegion":
        return cls(lower=np.full(dim, -np.inf), upper=np.full(dim, np.inf))

    @classmethod
    def positive_half_line(cls) -> "TruncRegion":
        return cls(lower=[0.0], upper=[np.inf])

    @classmethod
    def lower_half_plane(cls) -> "TruncRegion":
        """The region R x (-inf, 0] of unselected units"""
        return cls(lower=[-np.inf, -np.inf], upper=[np.inf, 0.0])

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def is_full(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))


class EscnParams(BaseModel):
    """Parameters of the univariate extended skew contaminated-normal law"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    mu: float = 0.0
    sigma2: float = Field(default=1.0, gt=0)
    lam: float = Field(default=0.0, alias="lambda")
    nu1: float = Field(gt=0, lt=1)
    nu2: float = Field(gt=0, lt=1)
    tau: float = 0.0


# ---------------------------------------------------------------- normal


def _check_variance(sigma2) -> None:
    if np.any(np.asarray(sigma2) <= 0):
        raise DomainError(f"Variance must be positive, got {sigma2}")


def norm_logpdf(x, mu=0.0, sigma2=1.0):
    _check_variance(sigma2)
    x = np.asarray(x, dtype=float)
    return -0.5 * (np.log(TWO_PI * sigma2) + (x - mu) ** 2 / sigma2)


def norm_pdf(x, mu=0.0, sigma2=1.0):
    """Normal density ``phi(x | mu, sigma2)``, vectorised over all arguments"""
    return np.exp(norm_logpdf(x, mu, sigma2))


def norm_cdf(x):
    return special.ndtr(x)


def norm_logcdf(x):
    return special.log_ndtr(x)


def bvn_cdf(h, k, r: float):
    """Lower orthant probability ``P(X <= h, Y <= k)`` of a standard bivariate
    normal with correlation ``r``.

    Drezner-Wesolowsky with Genz' refinements: Gauss-Legendre quadrature of the
    Plackett integral for moderate correlations and an asymptotic expansion
    around ``|r| = 1`` otherwise. Vectorised over ``h`` and ``k``; accurate to
    about 1e-15.
    """
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    out = np.empty(h.shape)
    zero = np.isneginf(h) | np.isneginf(k)
    h_inf, k_inf = np.isposinf(h), np.isposinf(k)
    out[zero] = 0.0
    out[h_inf & ~zero] = special.ndtr(k[h_inf & ~zero])
    out[k_inf & ~zero & ~h_inf] = special.ndtr(h[k_inf & ~zero & ~h_inf])
    finite = ~(zero | h_inf | k_inf)
    if np.any(finite):
        out[finite] = _bvn_upper(-h[finite], -k[finite], r)
    return out if out.ndim else float(out)


def _bvn_upper(h: np.ndarray, k: np.ndarray, r: float) -> np.ndarray:
    """``P(X > h, Y > k)`` for finite arrays ``h``, ``k``"""
    if abs(r) < 0.3:
        nodes, weights = GAUSS_LEGENDRE[6]
    elif abs(r) < 0.75:
        nodes, weights = GAUSS_LEGENDRE[12]
    else:
        nodes, weights = GAUSS_LEGENDRE[20]
    hk = h * k
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if abs(r) < 0.925:
            hs = (h * h + k * k) / 2
            asr = math.asin(r)
            bvn = np.zeros_like(h)
            for x, w in zip(nodes, weights):
                for sn in (math.sin(asr * (x + 1) / 2), math.sin(asr * (1 - x) / 2)):
                    bvn += w * np.exp((sn * hk - hs) / (1 - sn * sn))
            return bvn * asr / (2 * TWO_PI) + special.ndtr(-h) * special.ndtr(-k)

        if r < 0:
            k = -k
            hk = -hk
        bvn = np.zeros_like(h)
        if abs(r) < 1:
            a_s = (1 - r) * (1 + r)
            a = math.sqrt(a_s)
            bs = (h - k) ** 2
            c = (4 - hk) / 8
            d = (12 - hk) / 16
            bvn = (
                a
                * np.exp(-(bs / a_s + hk) / 2)
                * (1 - c * (bs - a_s) * (1 - d * bs / 5) / 3 + c * d * a_s * a_s / 5)
            )
            b = np.sqrt(bs)
            tail = (
                np.exp(-hk / 2)
                * math.sqrt(TWO_PI)
                * special.ndtr(-b / a)
                * b
                * (1 - c * bs * (1 - d * bs / 5) / 3)
            )
            bvn = np.where(hk > -160, bvn - tail, bvn)
            a = a / 2
            for x, w in zip(nodes, weights):
                xs = (a * (x + 1)) ** 2
                rs = np.sqrt(1 - xs)
                bvn = bvn + a * w * (
                    np.exp(-bs / (2 * xs) - hk / (1 + rs)) / rs
                    - np.exp(-(bs / xs + hk) / 2) * (1 + c * xs * (1 + d * xs))
                )
                xs = a_s * (1 - x) ** 2 / 4
                rs = np.sqrt(1 - xs)
                bvn = bvn + a * w * np.exp(-(bs / xs + hk) / 2) * (
                    np.exp(-hk * (1 - rs) / (2 * (1 + rs))) / rs
                    - (1 + c * xs * (1 + d * xs))
                )
            bvn = -bvn / TWO_PI
        if r > 0:
            return bvn + special.ndtr(-np.maximum(h, k))
        return -bvn + np.maximum(0.0, special.ndtr(-h) - special.ndtr(-k))


def _standardize(region: TruncRegion, mu, sigma) -> tuple[np.ndarray, np.ndarray]:
    scale = np.sqrt(np.diag(sigma))
    return (region.lower - mu) / scale, (region.upper - mu) / scale


def binorm_rect(region: TruncRegion, mu, sigma) -> float:
    """Probability that a bivariate normal falls in a rectangle

    Parameters
    ----------
    region : TruncRegion
        Bivariate rectangle, bounds may be infinite.
    mu : array_like
        Mean vector of length 2.
    sigma : array_like
        2 x 2 covariance matrix.

    Returns
    -------
    float
        ``P(lower <= X <= upper)`` by inclusion-exclusion over lower orthants.

    Raises
    ------
    DomainError
        If the correlation implied by `sigma` is +/-1 or a variance is not positive.
    """
    mu, sigma = _as_vector(mu), _as_matrix(sigma)
    if region.dim != 2 or mu.shape != (2,) or sigma.shape != (2, 2):
        raise ValueError("binorm_rect needs a bivariate region, mean and covariance")
    _check_variance(np.diag(sigma))
    r = sigma[0, 1] / math.sqrt(sigma[0, 0] * sigma[1, 1])
    if abs(r) >= 1:
        raise DomainError(f"Degenerate bivariate normal with correlation {r}")
    lo, up = _standardize(region, mu, sigma)

    # half-planes reduce to a univariate probability
    for j in (0, 1):
        if np.isneginf(lo[j]) and np.isposinf(up[j]):
            other = 1 - j
            return float(_interval_prob(lo[other], up[other]))

    corners = bvn_cdf(
        np.array([up[0], lo[0], up[0], lo[0]]),
        np.array([up[1], up[1], lo[1], lo[1]]),
        r,
    )
    prob = corners[0] - corners[1] - corners[2] + corners[3]
    return float(min(max(prob, 0.0), 1.0))


def _interval_prob(alpha, beta):
    """``Phi(beta) - Phi(alpha)`` evaluated in the tail that keeps precision"""
    alpha, beta = np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    upper_tail = alpha > 0
    return np.where(
        upper_tail,
        special.ndtr(-alpha) - special.ndtr(-beta),
        special.ndtr(beta) - special.ndtr(alpha),
    )


def normal_rect(region: TruncRegion, mu, sigma) -> float:
    """Rectangle probability of a univariate or bivariate normal"""
    mu, sigma = _as_vector(mu), _as_matrix(sigma)
    if region.dim == 1:
        _check_variance(sigma[0, 0])
        lo, up = _standardize(region, mu, sigma)
        return float(_interval_prob(lo[0], up[0]))
    return binorm_rect(region, mu, sigma)


# ------------------------------------------------------- contaminated normal


def _mvn_logpdf(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    if mu.shape[0] == 1:
        return norm_logpdf(x[..., 0], mu[0], sigma[0, 0])
    return np.asarray(stats.multivariate_normal(mean=mu, cov=sigma).logpdf(x))


def _points(x, p: CnParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if p.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., np.newaxis]
    if x.shape[-1] != p.dim:
        raise ValueError(
            f"Point of dimension {x.shape[-1]} does not match CN of dimension {p.dim}"
        )
    return x


def _component_logpdfs(x, p: CnParams) -> np.ndarray:
    x = _points(x, p)
    return np.stack(
        [
            math.log(weight) + _mvn_logpdf(x, p.mu, scale)
            for weight, scale in p.components()
        ]
    )


def cn_logpdf(x, p: CnParams):
    """Log-density of the CN law, computed with log-sum-exp over the components"""
    return special.logsumexp(_component_logpdfs(x, p), axis=0)


def cn_pdf(x, p: CnParams):
    return np.exp(cn_logpdf(x, p))


def cn_posterior_weight(x, p: CnParams):
    """Posterior probability that `x` comes from the inflated component"""
    parts = _component_logpdfs(x, p)
    return np.exp(parts[0] - special.logsumexp(parts, axis=0))


def cn_rect(region: TruncRegion, p: CnParams) -> float:
    """Probability of `region` under the CN law"""
    if region.dim != p.dim:
        raise ValueError("Region and CN parameters differ in dimension")
    return sum(
        weight * normal_rect(region, p.mu, scale) for weight, scale in p.components()
    )


def cn_logcdf(x, p: CnParams):
    """Univariate CN log-cdf ``log P(X <= x)``"""
    if p.dim != 1:
        raise ValueError("cn_logcdf is only defined for univariate CN")
    z = (np.asarray(x, dtype=float) - p.mu[0]) / math.sqrt(p.sigma[0, 0])
    return np.logaddexp(
        math.log(p.nu1) + special.log_ndtr(math.sqrt(p.nu2) * z),
        math.log(1 - p.nu1) + special.log_ndtr(z),
    )


def cn_cdf(x, p: CnParams):
    return np.exp(cn_logcdf(x, p))


def cn_quantile(prob: float, p: CnParams) -> float:
    """Quantile of a univariate CN law

    The cdf is monotone, so the root is bracketed by +/-12 units of the inflated
    component's standard deviation and polished with Brent's method.
    """
    if not 0 < prob < 1:
        raise DomainError(f"Probability must be in (0, 1), got {prob}")
    scale = math.sqrt(p.sigma[0, 0] / p.nu2)
    lo, hi = p.mu[0] - 12 * scale, p.mu[0] + 12 * scale
    return optimize.brentq(
        lambda x: float(cn_cdf(x, p)) - prob, lo, hi, xtol=1e-13, rtol=1e-15
    )


def cn_conditional(x1: float, p: CnParams) -> CnParams:
    """Conditional law of the second coordinate given the first

    The conditional distribution of a bivariate CN is again CN, with the
    Gaussian regression location and scale and the mixing weight replaced by
    the posterior weight of the inflated component given `x1` alone.
    """
    if p.dim != 2:
        raise ValueError("cn_conditional needs bivariate CN parameters")
    s11, s12, s22 = p.sigma[0, 0], p.sigma[0, 1], p.sigma[1, 1]
    if s11 <= 0:
        raise DomainError("Singular marginal scale of the conditioning coordinate")
    mu = p.mu[1] + s12 / s11 * (x1 - p.mu[0])
    scale = s22 - s12 * s12 / s11
    marginal = CnParams(mu=p.mu[:1], sigma=[[s11]], nu1=p.nu1, nu2=p.nu2)
    omega = float(cn_posterior_weight(x1, marginal))
    omega = min(max(omega, np.finfo(float).tiny), np.nextafter(1.0, 0.0))
    return CnParams(mu=[mu], sigma=[[scale]], nu1=omega, nu2=p.nu2)


def cn_sample(
    rng: np.random.Generator, p: CnParams, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw from the CN law through its scale-mixture representation

    Returns
    -------
    tuple of numpy.ndarray
        Draws of shape ``(size, dim)`` and the latent scale ``U`` (either `nu2`
        or 1) of each draw.
    """
    u = np.where(rng.uniform(size=size) < p.nu1, p.nu2, 1.0)
    z = rng.multivariate_normal(np.zeros(p.dim), p.sigma, size=size)
    return p.mu + z / np.sqrt(u)[:, np.newaxis], u


# ------------------------------------------------------------- skew family


def escn_logpdf(y, p: EscnParams):
    y = np.asarray(y, dtype=float)
    delta = p.lam * (y - p.mu) / math.sqrt(p.sigma2)
    tau_bar = p.tau / math.sqrt(1 + p.lam**2)
    numerator = np.logaddexp(
        math.log(p.nu1)
        + norm_logpdf(y, p.mu, p.sigma2 / p.nu2)
        + special.log_ndtr(math.sqrt(p.nu2) * (p.tau + delta)),
        math.log(1 - p.nu1)
        + norm_logpdf(y, p.mu, p.sigma2)
        + special.log_ndtr(p.tau + delta),
    )
    denominator = np.logaddexp(
        math.log(p.nu1) + special.log_ndtr(math.sqrt(p.nu2) * tau_bar),
        math.log(1 - p.nu1) + special.log_ndtr(tau_bar),
    )
    return numerator - denominator


def escn_pdf(y, p: EscnParams):
    return np.exp(escn_logpdf(y, p))


def escn_mean(p: EscnParams) -> float:
    """Mean ``mu + eta1 * sigma * lambda`` of the ESCN law"""
    spread = 1 + p.lam**2
    tau_bar = p.tau / math.sqrt(spread)
    log_eta = np.logaddexp(
        math.log(p.nu1 / p.nu2) + norm_logpdf(p.tau, 0.0, spread / p.nu2),
        math.log(1 - p.nu1) + norm_logpdf(p.tau, 0.0, spread),
    ) - np.logaddexp(
        math.log(p.nu1) + special.log_ndtr(math.sqrt(p.nu2) * tau_bar),
        math.log(1 - p.nu1) + special.log_ndtr(tau_bar),
    )
    return float(p.mu + math.exp(log_eta) * math.sqrt(p.sigma2) * p.lam)


def esn_pdf(y, mu: float, sigma2: float, lam: float, tau: float):
    """Extended skew-normal density, the Gaussian member of the ESCN family"""
    _check_variance(sigma2)
    y = np.asarray(y, dtype=float)
    delta = lam * (y - mu) / math.sqrt(sigma2)
    return np.exp(
        norm_logpdf(y, mu, sigma2)
        + special.log_ndtr(tau + delta)
        - special.log_ndtr(tau / math.sqrt(1 + lam**2))
    )


def scn_pdf(y, mu: float, sigma2: float, lam: float, nu1: float, nu2: float):
    """Skew contaminated-normal density (ESCN with zero shift)"""
    return escn_pdf(y, EscnParams(mu=mu, sigma2=sigma2, lam=lam, nu1=nu1, nu2=nu2))


# ------------------------------------------------------------------- slash


def slash_sample(
    rng: np.random.Generator,
    q: float,
    mu,
    sigma,
    size: int | None = None,
    return_scale: bool = False,
):
    """Draw ``mu + U**(-1/q) * Z`` with ``Z ~ N(0, sigma)`` and ``U ~ U(0, 1)``

    A single `U` is shared by the coordinates of each draw. With
    `return_scale`, the factors ``U**(-1/q)`` are returned as well.
    """
    if q <= 0:
        raise DomainError(f"Slash tail parameter must be positive, got {q}")
    mu, sigma = _as_vector(mu), _as_matrix(sigma)
    n = 1 if size is None else size
    z = rng.multivariate_normal(np.zeros(mu.shape[0]), sigma, size=n)
    scale = rng.uniform(size=n) ** (-1 / q)
    draws = mu + scale[:, np.newaxis] * z
    if size is None:
        draws, scale = draws[0], scale[0]
    return (draws, scale) if return_scale else draws


def slash_cdf(x: float, q: float) -> float:
    """Cdf of the standard univariate slash law, ``int_0^1 Phi(x u**(1/q)) du``"""
    if q <= 0:
        raise DomainError(f"Slash tail parameter must be positive, got {q}")
    value, _ = integrate.quad(
        lambda u: special.ndtr(x * u ** (1 / q)), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12
    )
    return value


def slash_quantile(prob: float, q: float) -> float:
    if not 0 < prob < 1:
        raise DomainError(f"Probability must be in (0, 1), got {prob}")
    if prob == 0.5:
        return 0.0
    hi = 1.0
    while slash_cdf(hi, q) < prob or slash_cdf(-hi, q) > prob:
        hi *= 2
    return optimize.brentq(lambda x: slash_cdf(x, q) - prob, -hi, hi, xtol=1e-12)

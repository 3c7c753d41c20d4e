import math

import numpy as np
import pytest
from pytest import raises
from scipy import integrate, special, stats

from selectcn.distributions import (
    CnParams,
    EscnParams,
    TruncRegion,
    binorm_rect,
    bvn_cdf,
    cn_cdf,
    cn_conditional,
    cn_pdf,
    cn_posterior_weight,
    cn_quantile,
    cn_rect,
    cn_sample,
    escn_mean,
    escn_pdf,
    esn_pdf,
    norm_pdf,
    scn_pdf,
    slash_cdf,
    slash_quantile,
    slash_sample,
)
from selectcn.error import DomainError

BIVARIATE = CnParams(
    mu=[0.5, -0.2], sigma=[[1.5, 0.6], [0.6, 1.0]], nu1=0.3, nu2=0.2
)
UNIVARIATE = CnParams(mu=[0.3], sigma=[[2.0]], nu1=0.25, nu2=0.4)


@pytest.mark.parametrize("r", [-0.95, -0.6, -0.2, 0.0, 0.1, 0.5, 0.8, 0.97])
def test_bvn_cdf_matches_scipy(r):
    h = np.array([-1.5, -0.3, 0.0, 0.7, 2.1])
    k = np.array([0.4, -1.1, 0.0, 1.3, -0.5])
    expected = [
        stats.multivariate_normal(mean=[0, 0], cov=[[1, r], [r, 1]]).cdf([a, b])
        for a, b in zip(h, k)
    ]
    np.testing.assert_allclose(bvn_cdf(h, k, r), expected, atol=1e-6)


@pytest.mark.parametrize("r", [-0.9, -0.4, 0.0, 0.3, 0.9])
def test_bvn_cdf_at_origin(r):
    # orthant probability in closed form
    assert bvn_cdf(0.0, 0.0, r) == pytest.approx(
        0.25 + math.asin(r) / (2 * math.pi), abs=1e-13
    )


def test_bvn_cdf_infinite_bounds():
    assert bvn_cdf(-np.inf, 0.3, 0.5) == 0.0
    assert bvn_cdf(np.inf, 0.3, 0.5) == pytest.approx(special.ndtr(0.3))
    assert bvn_cdf(np.inf, np.inf, 0.5) == 1.0


def test_binorm_rect_degenerate_correlation():
    region = TruncRegion(lower=[-1, -1], upper=[1, 1])
    with raises(DomainError, match="Degenerate bivariate normal"):
        binorm_rect(region, [0, 0], [[1.0, 1.0], [1.0, 1.0]])


def test_binorm_rect_half_plane():
    region = TruncRegion.lower_half_plane()
    sigma = [[2.0, 0.5], [0.5, 1.0]]
    assert binorm_rect(region, [0.3, 0.4], sigma) == pytest.approx(special.ndtr(-0.4))


def test_binorm_rect_inclusion_exclusion():
    region = TruncRegion(lower=[-0.5, -1.0], upper=[1.0, 0.5])
    sigma = np.array([[1.0, 0.4], [0.4, 2.0]])
    dist = stats.multivariate_normal(mean=[0.2, 0.1], cov=sigma)
    expected = (
        dist.cdf([1.0, 0.5])
        - dist.cdf([-0.5, 0.5])
        - dist.cdf([1.0, -1.0])
        + dist.cdf([-0.5, -1.0])
    )
    assert binorm_rect(region, [0.2, 0.1], sigma) == pytest.approx(expected, abs=1e-6)


def test_empty_region_rejected():
    with raises(ValueError, match="Empty region"):
        TruncRegion(lower=[1.0], upper=[0.0])


def test_cn_params_validation():
    with raises(ValueError, match="positive definite"):
        CnParams(mu=[0, 0], sigma=[[1, 2], [2, 1]], nu1=0.5, nu2=0.5)
    with raises(ValueError):
        CnParams(mu=[0], sigma=[[1]], nu1=0.0, nu2=0.5)
    with raises(ValueError, match="does not match"):
        CnParams(mu=[0, 0], sigma=[[1]], nu1=0.5, nu2=0.5)


def test_cn_pdf_univariate_normalised():
    value, _ = integrate.quad(
        lambda x: float(cn_pdf(x, UNIVARIATE)), -np.inf, np.inf, epsabs=1e-12
    )
    assert value == pytest.approx(1.0, abs=1e-8)


def test_cn_pdf_bivariate_normalised():
    value, _ = integrate.dblquad(
        lambda y, x: float(cn_pdf([x, y], BIVARIATE)),
        -30,
        30,
        -30,
        30,
        epsabs=1e-10,
    )
    assert value == pytest.approx(1.0, abs=1e-6)


def test_cn_pdf_is_mixture():
    x = np.array([[0.1, 0.2], [-1.0, 2.0]])
    expected = 0.3 * stats.multivariate_normal(
        BIVARIATE.mu, BIVARIATE.sigma / 0.2
    ).pdf(x) + 0.7 * stats.multivariate_normal(BIVARIATE.mu, BIVARIATE.sigma).pdf(x)
    np.testing.assert_allclose(cn_pdf(x, BIVARIATE), expected, rtol=1e-12)


def test_posterior_weight_larger_in_tails():
    near, far = cn_posterior_weight([0.3, 8.0], UNIVARIATE)
    assert 0 < near < far < 1


def test_cn_cdf_and_quantile():
    for prob in (0.01, 0.25, 0.5, 0.9):
        x = cn_quantile(prob, UNIVARIATE)
        assert cn_cdf(x, UNIVARIATE) == pytest.approx(prob, abs=1e-12)
    with raises(DomainError):
        cn_quantile(1.0, UNIVARIATE)


def test_cn_quantile_of_standard_contaminated_law():
    # with 90% of the mass on N(0, 1) the 75% quantile stays close to 0.674
    standard = CnParams(mu=[0.0], sigma=[[1.0]], nu1=0.1, nu2=0.1)
    x = cn_quantile(0.75, standard)
    assert x == pytest.approx(0.7310, abs=5e-4)
    mixture = 0.1 * special.ndtr(x * math.sqrt(0.1)) + 0.9 * special.ndtr(x)
    assert mixture == pytest.approx(0.75, abs=1e-12)


def test_cn_rect_univariate():
    region = TruncRegion(lower=[-1.0], upper=[1.0])
    expected = cn_cdf(1.0, UNIVARIATE) - cn_cdf(-1.0, UNIVARIATE)
    assert cn_rect(region, UNIVARIATE) == pytest.approx(float(expected), abs=1e-12)


def test_cn_joint_factorises_into_marginal_and_conditional():
    x1, x2 = 0.8, -0.4
    marginal = CnParams(
        mu=BIVARIATE.mu[:1], sigma=BIVARIATE.sigma[:1, :1], nu1=0.3, nu2=0.2
    )
    conditional = cn_conditional(x1, BIVARIATE)
    product = float(cn_pdf(x1, marginal)) * float(cn_pdf(x2, conditional))
    assert float(cn_pdf([x1, x2], BIVARIATE)) == pytest.approx(product, rel=1e-12)


def test_cn_sample_latent_share():
    rng = np.random.default_rng(10)
    draws, u = cn_sample(rng, BIVARIATE, 100_000)
    assert draws.shape == (100_000, 2)
    assert np.mean(u == 0.2) == pytest.approx(0.3, abs=0.01)


def test_escn_normalised_and_mean():
    p = EscnParams(mu=0.4, sigma2=1.7, lam=-1.2, nu1=0.2, nu2=0.25, tau=0.6)
    total, _ = integrate.quad(lambda y: float(escn_pdf(y, p)), -np.inf, np.inf)
    mean, _ = integrate.quad(lambda y: y * float(escn_pdf(y, p)), -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-8)
    assert escn_mean(p) == pytest.approx(mean, abs=1e-7)


def test_escn_tends_to_cn_for_large_shift():
    p = EscnParams(mu=0.2, sigma2=1.3, lam=0.8, nu1=0.3, nu2=0.4, tau=50.0)
    cn = CnParams(mu=[0.2], sigma=[[1.3]], nu1=0.3, nu2=0.4)
    y = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(escn_pdf(y, p), cn_pdf(y, cn), atol=1e-10)


def test_escn_lambda_alias():
    p = EscnParams(**{"lambda": 0.5, "nu1": 0.1, "nu2": 0.5})
    assert p.lam == 0.5


def test_esn_pdf_is_skew_normal_without_shift():
    y = np.linspace(-2, 2, 9)
    expected = stats.skewnorm(a=1.5, loc=0.3, scale=math.sqrt(2.0)).pdf(y)
    np.testing.assert_allclose(esn_pdf(y, 0.3, 2.0, 1.5, 0.0), expected, rtol=1e-10)


def test_scn_pdf_symmetric_case():
    cn = CnParams(mu=[0.0], sigma=[[1.0]], nu1=0.4, nu2=0.3)
    y = np.linspace(-2, 2, 5)
    np.testing.assert_allclose(scn_pdf(y, 0.0, 1.0, 0.0, 0.4, 0.3), cn_pdf(y, cn))


def test_norm_pdf_rejects_variance():
    with raises(DomainError, match="Variance must be positive"):
        norm_pdf(0.0, 0.0, 0.0)


def test_slash_cdf_and_quantile():
    assert slash_cdf(0.0, 1.43) == pytest.approx(0.5, abs=1e-12)
    x = slash_quantile(0.75, 1.43)
    assert slash_cdf(x, 1.43) == pytest.approx(0.75, abs=1e-10)
    # heavier tails than the normal law
    assert x > special.ndtri(0.75)
    assert x == pytest.approx(1.2031, abs=2e-3)


def test_slash_sample_scale():
    rng = np.random.default_rng(4)
    draws, scale = slash_sample(
        rng, 1.43, [0.0, 0.0], np.eye(2), 200_000, return_scale=True
    )
    assert draws.shape == (200_000, 2)
    assert np.all(scale >= 1)
    # P(scale <= s) = 1 - s**(-q)
    assert np.mean(scale <= 2.0) == pytest.approx(1 - 2.0**-1.43, abs=0.005)
    # marginal quantile against cdf inversion, about 5 Monte Carlo errors
    empirical = np.quantile(draws[:, 0], 0.75)
    assert empirical == pytest.approx(slash_quantile(0.75, 1.43), abs=0.025)
    with raises(DomainError):
        slash_sample(rng, -1.0, [0.0], [[1.0]])

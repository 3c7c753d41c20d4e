import numpy as np
import pytest
from pytest import raises

from selectcn.error import EstimabilityError, RankDeficiencyError
from selectcn.estimation import heckman_two_step
from selectcn.model import ModelKind, SelectionData


def test_two_step_close_to_truth(normal_data):
    theta = heckman_two_step(normal_data)
    assert theta.kind == ModelKind.sln
    np.testing.assert_allclose(theta.beta, [1.0, 0.5], atol=0.3)
    np.testing.assert_allclose(theta.gamma[1:], [0.3, -0.5], atol=0.3)
    assert 0.5 < theta.sigma2 < 1.6
    assert abs(theta.rho) <= 0.99


def test_two_step_attaches_contamination_pair(normal_data):
    theta = heckman_two_step(normal_data, nu=(0.3, 0.4))
    assert theta.nu == (0.3, 0.4)
    assert theta.kind == ModelKind.slcn


def test_two_step_too_few_selected():
    rng = np.random.default_rng(0)
    n = 12
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    w = np.column_stack([x, rng.normal(size=n)])
    c = np.zeros(n, dtype=int)
    c[:3] = 1
    data = SelectionData(x=x, w=w, v1=np.where(c == 1, 1.0, np.nan), c=c)
    with raises(EstimabilityError, match="at least 4 selected units"):
        heckman_two_step(data)


def test_two_step_rank_deficiency():
    rng = np.random.default_rng(1)
    n = 60
    z = rng.normal(size=(n, 2))
    c = (z[:, 0] + rng.normal(size=n) > 0).astype(int)
    # constant among selected units, collinear with the intercept
    x = np.column_stack([np.ones(n), c])
    w = np.column_stack([np.ones(n), z])
    data = SelectionData(x=x, w=w, v1=np.where(c == 1, rng.normal(size=n), np.nan), c=c)
    with raises(RankDeficiencyError, match="not of full column rank"):
        heckman_two_step(data)

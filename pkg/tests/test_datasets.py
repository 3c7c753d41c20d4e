import numpy as np
import pandas as pd
import pytest
from pytest import raises

from selectcn import estimate
from selectcn.config import EcmOptions
from selectcn.datasets import (
    DATA_DIR_ENV,
    RAND_COVARIATES,
    data_path,
    load_mroz,
    load_rand,
    mroz_frame,
)
from selectcn.inference import Classification


def write_mroz(path, n=30):
    rng = np.random.default_rng(0)
    lfp = np.array([1, 0] * (n // 2))
    df = pd.DataFrame(
        {
            "lfp": lfp,
            "wage": np.where(lfp == 1, rng.uniform(1, 10, n), 0.0),
            "educ": rng.integers(8, 17, n),
            "city": rng.integers(0, 2, n),
            "huswage": rng.uniform(2, 20, n),
            "kids5": rng.integers(0, 3, n),
            "mtr": rng.uniform(0.4, 0.9, n),
            "fatheduc": rng.integers(0, 17, n),
        }
    )
    df.to_csv(path, index=False)
    return df


def test_mroz_log_wage(tmp_path):
    source = write_mroz(tmp_path / "mroz.csv")
    df = mroz_frame(tmp_path / "mroz.csv")
    assert {"hwage", "youngkids", "tax", "feduc"} <= set(df.columns)
    assert df["lwage"].isna().sum() == 15
    np.testing.assert_allclose(
        df["lwage"][source["lfp"] == 1], np.log(source["wage"][source["lfp"] == 1])
    )


def test_load_mroz(tmp_path):
    write_mroz(tmp_path / "mroz.csv")
    data = load_mroz(tmp_path / "mroz.csv")
    assert data.x_names == ["const", "educ", "city"]
    assert data.w_names == [
        "const",
        "educ",
        "city",
        "hwage",
        "youngkids",
        "tax",
        "feduc",
    ]
    assert data.n_selected == 15


def test_mroz_rejects_non_positive_wage(tmp_path):
    df = write_mroz(tmp_path / "mroz.csv")
    df.loc[0, "wage"] = 0.0
    df.to_csv(tmp_path / "mroz.csv", index=False)
    with raises(ValueError, match="must have a positive wage"):
        mroz_frame(tmp_path / "mroz.csv")


def test_mroz_missing_column(tmp_path):
    write_mroz(tmp_path / "mroz.csv").drop(columns="mtr").to_csv(
        tmp_path / "mroz.csv", index=False
    )
    with raises(ValueError, match="\\['tax'\\] not found"):
        mroz_frame(tmp_path / "mroz.csv")


def test_load_rand_keeps_second_year(tmp_path):
    rng = np.random.default_rng(1)
    n = 240
    values = rng.normal(size=(n, len(RAND_COVARIATES)))
    df = pd.DataFrame(values, columns=RAND_COVARIATES)
    df["year"] = np.repeat([1, 2, 3], n // 3)
    df["binexp"] = np.tile([1, 0, 1, 1], n // 4)
    df["meddol"] = np.where(df["binexp"] == 1, rng.uniform(1, 500, n), 0.0)
    df.loc[80, "educdec"] = np.nan
    df.to_csv(tmp_path / "rand.csv", index=False, na_rep="NA")
    data = load_rand(tmp_path / "rand.csv")
    assert data.n == 79
    assert data.x_names == data.w_names == ["const", *RAND_COVARIATES]


def test_data_path(tmp_path, monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
    assert data_path("mroz.csv") is None
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
    assert data_path("mroz.csv") is None
    write_mroz(tmp_path / "mroz.csv")
    assert data_path("mroz.csv") == tmp_path / "mroz.csv"


@pytest.mark.external_data
@pytest.mark.skipif(data_path("mroz.csv") is None, reason="Mroz data not available")
def test_mroz_estimates():
    data = load_mroz(data_path("mroz.csv"))
    assert (data.n, data.n_selected) == (753, 428)
    options = EcmOptions(tol=1e-8, max_iter=5000, init="grid")
    slcn = estimate(data, "slcn", options)
    sln = estimate(data, "sln", EcmOptions(tol=1e-8, max_iter=5000))
    theta = slcn.theta
    assert theta.sigma == pytest.approx(0.487, abs=0.02)
    assert theta.rho == pytest.approx(-0.736, abs=0.02)
    assert theta.nu1 == pytest.approx(0.218, abs=0.02)
    assert theta.nu2 == pytest.approx(0.118, abs=0.02)
    assert slcn.aic < sln.aic
    outliers = sum(
        label == Classification.outlier
        for label, selected in zip(slcn.classifications, data.selected)
        if selected
    )
    assert outliers == pytest.approx(45, abs=3)


@pytest.mark.external_data
@pytest.mark.skipif(data_path("rand.csv") is None, reason="RAND data not available")
def test_rand_contamination_improves_fit():
    data = load_rand(data_path("rand.csv"))
    assert data.n == 5574
    slcn = estimate(data, "slcn", EcmOptions(tol=1e-8, max_iter=5000))
    sln = estimate(data, "sln", EcmOptions(tol=1e-8, max_iter=5000))
    assert slcn.converged and sln.converged
    assert slcn.loglik > sln.loglik
    assert slcn.bic < sln.bic

from pathlib import Path

import pandas as pd
import pytest
from pytest import raises

from selectcn.config import DEFAULT_NU_GRID, EcmOptions, InitMethod, RunConfig
from selectcn.model import ModelKind

from conftest import TEST_DATA_DIR

MODULE_TEST_DATA_DIR = TEST_DATA_DIR / "config"


def test_run_config_from_file():
    config = RunConfig.from_file(MODULE_TEST_DATA_DIR / "run.yaml")
    assert config.input == Path("data/selection.csv")
    # a single covariate is cast to a list
    assert config.x == ["educ"]
    assert config.w == ["educ", "hwage"]
    assert config.model == ModelKind.sln
    assert config.ecm.init == InitMethod.grid
    assert config.ecm.nu_grid == [(0.1, 0.1), (0.5, 0.5)]
    assert config.ecm.tol == 1e-8
    assert config.simulation["reps"] == 10


def test_run_config_defaults_from_empty_file():
    config = RunConfig.from_file(MODULE_TEST_DATA_DIR / "empty.yaml")
    assert config == RunConfig()
    assert config.model == ModelKind.slcn
    assert config.ecm.nu_grid == DEFAULT_NU_GRID
    assert len(DEFAULT_NU_GRID) == 25


def test_outcome_equal_to_selection_raises():
    with raises(ValueError, match="Outcome and selection column must differ"):
        RunConfig.from_file(MODULE_TEST_DATA_DIR / "outcome_is_selection.yaml")


def test_invalid_fixed_pair_raises():
    with raises(ValueError, match="must lie in \\(0, 1\\) x \\(0, 1\\)"):
        RunConfig.from_file(MODULE_TEST_DATA_DIR / "invalid_pair.yaml")


def test_update_applies_non_empty_overrides():
    config = RunConfig.from_file(MODULE_TEST_DATA_DIR / "run.yaml")
    updated = config.update(
        outcome=None,
        x=(),
        w=("educ",),
        model="slcn",
        ecm_tol=1e-4,
        ecm_fix_nu=(0.2, 0.3),
    )
    assert updated.outcome == "lwage"
    assert updated.x == ["educ"]
    assert updated.w == ["educ"]
    assert updated.model == ModelKind.slcn
    assert updated.ecm.tol == 1e-4
    assert updated.ecm.fix_nu == (0.2, 0.3)
    # untouched options survive the update
    assert updated.ecm.init == InitMethod.grid
    assert config.ecm.tol == 1e-8


@pytest.mark.parametrize(
    "options, match",
    [
        ({"nu_init": (0.0, 0.5)}, "must lie in"),
        ({"nu_grid": []}, "`nu_grid` must not be empty"),
        ({"nu_grid": [(0.2, 0.2), (1.2, 0.2)]}, "must lie in"),
        ({"tol": 0.0}, "greater than 0"),
    ],
)
def test_ecm_options_validation(options, match):
    with raises(ValueError, match=match):
        EcmOptions(**options)


def test_check_data_columns():
    df = pd.DataFrame(columns=["lwage", "lfp", "educ"])
    config = RunConfig(outcome="lwage", selection="lfp", x=["educ"], w=["educ"])
    config.check_data_columns(df)
    with raises(ValueError, match="\\['hwage'\\] not found"):
        config.update(w=("educ", "hwage")).check_data_columns(df)
    with raises(ValueError, match="outcome and a selection column are required"):
        RunConfig().check_data_columns(df)

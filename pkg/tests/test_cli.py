import json

import numpy as np
import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from selectcn import cli
from selectcn.inference import FitResult
from selectcn.simulation import SimDesign, generate_dataset

runner = CliRunner()

COLUMNS = ["--outcome", "y", "--selection", "s", "-x", "w1", "-w", "w1", "-w", "w2"]


def selection_frame(n: int, seed: int) -> pd.DataFrame:
    data = generate_dataset(SimDesign(n=n), np.random.default_rng(seed))
    return pd.DataFrame(
        {"y": data.v1, "s": data.c, "w1": data.w[:, 1], "w2": data.w[:, 2]}
    )


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "selection.csv"
    selection_frame(300, 21).to_csv(path, index=False, na_rep="NA")
    yield path


@pytest.fixture(scope="module")
def sln_fit_stem(data_file, tmp_path_factory):
    stem = tmp_path_factory.mktemp("fit") / "sln"
    result = runner.invoke(
        cli,
        ["fit", str(data_file), *COLUMNS, "--model", "sln", "--out", str(stem)],
    )
    assert result.exit_code == 0, result.output
    yield stem


def test_fit_writes_results(sln_fit_stem):
    report = sln_fit_stem.with_suffix(".txt").read_text()
    assert report.startswith("Model: sln")
    assert "converged after" in report
    assert "good observations" in report
    content = json.loads(sln_fit_stem.with_suffix(".json").read_text())
    assert content["columns"]["x"] == ["w1"]
    result = FitResult.from_json(sln_fit_stem.with_suffix(".json"))
    assert result.parameter_names[0] == "beta_const"
    assert result.n == 300


def test_fit_with_config_file(data_file, tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text(
        yaml.safe_dump(
            {"outcome": "y", "selection": "s", "x": "w1", "w": ["w1", "w2"]}
        )
    )
    stem = tmp_path / "fit"
    result = runner.invoke(
        cli,
        [
            "fit",
            str(data_file),
            "--config",
            str(config),
            "--model",
            "slcn",
            "--fix-nu1",
            "0.5",
            "--fix-nu2",
            "0.9",
            "--out",
            str(stem),
        ],
    )
    assert result.exit_code == 0, result.output
    fitted = FitResult.from_json(stem.with_suffix(".json"))
    assert fitted.theta.nu == (0.5, 0.9)


def test_fit_unknown_column(data_file, tmp_path):
    result = runner.invoke(
        cli,
        [
            "fit",
            str(data_file),
            "--outcome",
            "wage",
            "--selection",
            "s",
            "-x",
            "w1",
            "-w",
            "w1",
            "--out",
            str(tmp_path / "fit"),
        ],
    )
    assert result.exit_code == 1
    assert "['wage'] not found" in result.output


def test_fit_requires_both_fixed_values(data_file, tmp_path):
    result = runner.invoke(
        cli, ["fit", str(data_file), *COLUMNS, "--fix-nu1", "0.2"]
    )
    assert result.exit_code == 1
    assert "--fix-nu1 and --fix-nu2 must be given together" in result.output


def test_fit_without_input(tmp_path):
    result = runner.invoke(cli, ["fit", *COLUMNS, "--out", str(tmp_path / "fit")])
    assert result.exit_code == 1
    assert "No input file given" in result.output


def test_fit_not_converged(data_file, tmp_path):
    stem = tmp_path / "short"
    result = runner.invoke(
        cli,
        [
            "fit",
            str(data_file),
            *COLUMNS,
            "--model",
            "slcn",
            "--tol",
            "1e-14",
            "--max-iter",
            "1",
            "--out",
            str(stem),
        ],
    )
    assert result.exit_code == 2
    assert "NOT converged" in stem.with_suffix(".txt").read_text()
    assert not FitResult.from_json(stem.with_suffix(".json")).converged


def test_diagnose(sln_fit_stem, tmp_path):
    out = tmp_path / "diagnostics"
    result = runner.invoke(
        cli,
        [
            "diagnose",
            str(sln_fit_stem.with_suffix(".json")),
            "--n-sim",
            "19",
            "--seed",
            "1",
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    residuals = pd.read_csv(out / "residuals.csv")
    assert len(residuals) == 300
    assert np.all(residuals["band_lo"] <= residuals["band_hi"])
    classification = pd.read_csv(out / "classification.csv")
    assert list(classification.columns) == [
        "unit",
        "selected",
        "eps_hat",
        "classification",
    ]
    assert set(classification["classification"]) == {"Good"}


def test_diagnose_rejects_other_data(sln_fit_stem, tmp_path):
    other = tmp_path / "other.csv"
    selection_frame(200, 22).to_csv(other, index=False, na_rep="NA")
    result = runner.invoke(
        cli,
        [
            "diagnose",
            str(sln_fit_stem.with_suffix(".json")),
            str(other),
            "--n-sim",
            "19",
            "--out",
            str(tmp_path / "diagnostics"),
        ],
    )
    assert result.exit_code == 1
    assert "do not match the fitted sample" in result.output


def test_curves(tmp_path):
    out = tmp_path / "curves.csv"
    result = runner.invoke(
        cli,
        ["curves", "--nu1", "0.1", "--nu2", "0.5", "--points", "5", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    table = pd.read_csv(out)
    assert len(table) == 2 * 5
    assert set(table["label"]) == {"normal", "nu1=0.1,nu2=0.5"}


def test_curves_invalid_range(tmp_path):
    result = runner.invoke(
        cli, ["curves", "--x-min", "1", "--x-max", "0", "--out", str(tmp_path / "c")]
    )
    assert result.exit_code == 1
    assert "--x-min must be smaller than --x-max" in result.output


def test_simulate(tmp_path):
    out = tmp_path / "simulation"
    result = runner.invoke(
        cli,
        [
            "simulate",
            "--n",
            "200",
            "--reps",
            "1",
            "--model",
            "sln",
            "--max-iter",
            "300",
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    assert {p.name for p in out.iterdir()} == {
        "parameters.csv",
        "criteria.csv",
        "selection.csv",
        "summary.json",
    }
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_reps"] == 1
    assert summary["design"]["n"] == 200


def test_simulate_invalid_design(tmp_path):
    result = runner.invoke(
        cli, ["simulate", "--law", "cn", "--reps", "1", "--out", str(tmp_path)]
    )
    assert result.exit_code == 1
    assert "Invalid simulation design" in result.output


def test_diagnose_stacked_shifts_selected_residuals(sln_fit_stem, tmp_path):
    residuals = {}
    for flag in ("--no-stacked", "--stacked"):
        out = tmp_path / flag.strip("-")
        result = runner.invoke(
            cli,
            [
                "diagnose",
                str(sln_fit_stem.with_suffix(".json")),
                flag,
                "--n-sim",
                "19",
                "--out",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out / "residuals.csv").set_index("unit")
        residuals[flag] = table["residual"].sort_index()
    assert (residuals["--stacked"] >= residuals["--no-stacked"]).all()
    assert (residuals["--stacked"] > residuals["--no-stacked"]).any()

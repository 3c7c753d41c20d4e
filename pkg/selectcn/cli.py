import logging
from pathlib import Path

import click
import numpy as np
import pandas as pd

from selectcn.config import RunConfig
from selectcn.core import estimate
from selectcn.error import EstimationError
from selectcn.inference import (
    FitResult,
    detection_summary,
    residual_envelope,
)
from selectcn.model import SelectionData, lambda_curve_export, loglik, read_csv
from selectcn.simulation import SimDesign, run_monte_carlo

logger = logging.getLogger(__name__)

EXIT_NOT_CONVERGED = 2


class SelectcnGroup(click.Group):
    """Command group reporting usage errors with exit code 1

    Exit code 2 is reserved for fits that did not converge.
    """

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as error:
            error.exit_code = 1
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as error:
            error.exit_code = 1
            raise


cli = SelectcnGroup()

config_option = click.option(
    "--config",
    "config_file",
    help="Yaml file with run parameters, overridden by explicit options",
    type=click.Path(exists=True, path_type=Path),
    default=None,
)
seed_option = click.option("--seed", help="Random seed", type=int, default=None)


def load_config(config_file: Path | None, **overrides) -> RunConfig:
    try:
        config = RunConfig.from_file(config_file) if config_file else RunConfig()
        return config.update(**overrides)
    except ValueError as error:
        raise click.ClickException(f"Invalid run parameters: {error}") from error


def read_data(config: RunConfig) -> SelectionData:
    if config.input is None:
        raise click.UsageError("No input file given")
    try:
        df = read_csv(config.input)
        config.check_data_columns(df)
        return SelectionData.from_frame(
            df,
            outcome=config.outcome,
            selection=config.selection,
            x=config.x,
            w=config.w,
            intercept=config.intercept,
        )
    except ValueError as error:
        raise click.ClickException(str(error)) from error


def fit_report(result: FitResult) -> str:
    """Human-readable summary of a fit"""
    status = "converged" if result.converged else "NOT converged"
    counts = detection_summary(result.classifications)
    lines = [
        f"Model: {result.kind.value}   n = {result.n}   {status} after "
        f"{result.iterations} iterations",
        f"Log-likelihood: {result.loglik:.4f}   AIC: {result.aic:.4f}   "
        f"BIC: {result.bic:.4f}   (k = {result.k})",
        "",
        result.summary().to_string(float_format=lambda v: f"{v:.4f}"),
        "",
        _counts_line(counts),
    ]
    if flags := result.trace.flags + result.information_flags:
        lines += ["", "Flags:", *[f"  {flag}" for flag in flags]]
    return "\n".join(lines) + "\n"


def _counts_line(counts: dict[str, int]) -> str:
    return (
        f"{counts['Good']} good observations, {counts['Outlier']} outliers and "
        f"{counts['Inlier']} inliers"
    )


@cli.command("fit")
@click.argument(
    "input_file", type=click.Path(exists=True, path_type=Path), required=False
)
@config_option
@click.option("--outcome", help="Outcome column", type=str, default=None)
@click.option("--selection", help="Binary selection column", type=str, default=None)
@click.option("-x", "--x", "x", help="Outcome covariate", type=str, multiple=True)
@click.option("-w", "--w", "w", help="Selection covariate", type=str, multiple=True)
@click.option("--intercept/--no-intercept", default=None)
@click.option("--model", type=click.Choice(["sln", "slcn"]), default=None)
@click.option("--tol", type=float, default=None)
@click.option("--max-iter", type=int, default=None)
@click.option("--init", type=click.Choice(["two-step", "grid"]), default=None)
@click.option("--fix-nu1", type=float, default=None)
@click.option("--fix-nu2", type=float, default=None)
@click.option("--k-override", help="Parameter count for AIC/BIC", type=int)
@seed_option
@click.option(
    "--out",
    help="Output stem, `<out>.json` and `<out>.txt` are written",
    type=click.Path(path_type=Path),
    default=None,
)
def cli_fit(
    input_file: Path | None,
    config_file: Path | None,
    outcome: str | None,
    selection: str | None,
    x: tuple[str, ...],
    w: tuple[str, ...],
    intercept: bool | None,
    model: str | None,
    tol: float | None,
    max_iter: int | None,
    init: str | None,
    fix_nu1: float | None,
    fix_nu2: float | None,
    k_override: int | None,
    seed: int | None,
    out: Path | None,
):
    """Fit an SLn or SLcn selection model to the csv file `input_file`

    Outcomes of unselected units must be given as ``NA``.

    Example
    -------
    $ selectcn fit mroz.csv --outcome lwage --selection lfp
                  -x educ -x city -w educ -w city -w hwage --out mroz_slcn
    """
    if (fix_nu1 is None) != (fix_nu2 is None):
        raise click.UsageError("--fix-nu1 and --fix-nu2 must be given together")
    config = load_config(
        config_file,
        input=input_file,
        outcome=outcome,
        selection=selection,
        x=x,
        w=w,
        intercept=intercept,
        model=model,
        seed=seed,
        out=out,
        k_override=k_override,
        ecm_tol=tol,
        ecm_max_iter=max_iter,
        ecm_init=init,
        ecm_fix_nu=None if fix_nu1 is None else (fix_nu1, fix_nu2),
    )
    data = read_data(config)
    columns = {
        "input": str(config.input),
        "outcome": config.outcome,
        "selection": config.selection,
        "x": config.x,
        "w": config.w,
        "intercept": config.intercept,
    }
    try:
        result = estimate(
            data,
            kind=config.model,
            options=config.ecm,
            k_override=config.k_override,
            columns=columns,
        )
    except (EstimationError, ValueError) as error:
        raise click.ClickException(f"Estimation failed: {error}") from error

    stem = config.out or Path("fit")
    stem.parent.mkdir(parents=True, exist_ok=True)
    result.to_json(stem.with_suffix(".json"))
    report = fit_report(result)
    stem.with_suffix(".txt").write_text(report, encoding="utf-8")
    click.echo(report)
    logger.info(f"Results written to {stem.with_suffix('.json')}")
    if not result.converged:
        click.echo("The fit did not converge, results are flagged", err=True)
        click.get_current_context().exit(EXIT_NOT_CONVERGED)


@cli.command("simulate")
@config_option
@click.option("--law", type=click.Choice(["normal", "cn", "slash"]), default=None)
@click.option("--nu1", type=float, default=None)
@click.option("--nu2", type=float, default=None)
@click.option("--q", help="Slash tail parameter", type=float, default=None)
@click.option("--n", "n", help="Sample size", type=int, default=None)
@click.option("--reps", help="Number of replicates", type=int, default=None)
@click.option("--missing", help="Target missing rate", type=float, default=None)
@click.option("--sigma2", type=float, default=None)
@click.option("--rho", type=float, default=None)
@click.option("--gamma0", help="Explicit selection intercept", type=float)
@click.option(
    "--model",
    "models",
    type=click.Choice(["sln", "slcn"]),
    multiple=True,
    help="Models to fit, defaults to both",
)
@click.option("--jobs", help="Worker processes", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--max-iter", type=int, default=None)
@seed_option
@click.option(
    "--out",
    help="Output directory",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
)
def cli_simulate(
    config_file: Path | None,
    law: str | None,
    nu1: float | None,
    nu2: float | None,
    q: float | None,
    n: int | None,
    reps: int | None,
    missing: float | None,
    sigma2: float | None,
    rho: float | None,
    gamma0: float | None,
    models: tuple[str, ...],
    jobs: int | None,
    tol: float | None,
    max_iter: int | None,
    seed: int | None,
    out: Path | None,
):
    """Monte Carlo study of the estimators under a simulated design

    Writes ``parameters.csv``, ``criteria.csv``, ``selection.csv`` and
    ``summary.json`` to the output directory.

    Example
    -------
    $ selectcn simulate --law cn --nu1 0.1 --nu2 0.1 --n 500 --reps 50
                       --missing 0.25 --out sim_cn
    """
    config = load_config(
        config_file, seed=seed, out=out, ecm_tol=tol, ecm_max_iter=max_iter
    )
    flags = {
        "law": law,
        "nu1": nu1,
        "nu2": nu2,
        "q": q,
        "n": n,
        "reps": reps,
        "target_missing_rate": missing,
        "sigma2": sigma2,
        "rho": rho,
        "gamma0": gamma0,
        "models": list(models) or None,
        "jobs": jobs,
        "seed": seed,
    }
    settings = dict(config.simulation)
    settings.update({key: value for key, value in flags.items() if value is not None})
    n_reps = settings.pop("reps", 100)
    n_jobs = settings.pop("jobs", 1)
    kinds = settings.pop("models", ["sln", "slcn"])
    settings.setdefault("seed", config.seed)
    try:
        design = SimDesign(**settings)
        summary = run_monte_carlo(
            design, n_reps, models=kinds, options=config.ecm, n_jobs=n_jobs
        )
    except ValueError as error:
        raise click.ClickException(f"Invalid simulation design: {error}") from error

    directory = config.out or Path("simulation")
    for path in summary.write(directory):
        logger.info(f"Written {path}")
    click.echo(summary.to_frames()["parameters"].to_string(index=False))


@cli.command("diagnose")
@click.argument("fit_file", type=click.Path(exists=True, path_type=Path))
@click.argument(
    "input_file", type=click.Path(exists=True, path_type=Path), required=False
)
@config_option
@click.option("--n-sim", help="Simulated samples for the envelope", type=int)
@click.option("--level", help="Envelope level", type=float, default=None)
@click.option(
    "--randomized/--no-randomized",
    help="Randomize residuals of unselected units",
    default=None,
)
@click.option(
    "--stacked/--no-stacked",
    help="Shift the cdf of selected units by the unselected probability",
    default=None,
)
@seed_option
@click.option(
    "--out",
    help="Output directory",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
)
def cli_diagnose(
    fit_file: Path,
    input_file: Path | None,
    config_file: Path | None,
    n_sim: int | None,
    level: float | None,
    randomized: bool | None,
    stacked: bool | None,
    seed: int | None,
    out: Path | None,
):
    """Quantile residuals with envelope and unit classification of a fit

    `fit_file` is the json written by ``selectcn fit``; the data are read from
    `input_file`, or from the file recorded in the fit.
    """
    try:
        result = FitResult.from_json(fit_file)
    except (ValueError, KeyError) as error:
        raise click.ClickException(f"Cannot read fit {fit_file}: {error}") from error
    columns = result.columns
    config = load_config(
        config_file,
        input=input_file or columns.get("input"),
        outcome=columns.get("outcome"),
        selection=columns.get("selection"),
        x=columns.get("x"),
        w=columns.get("w"),
        intercept=columns.get("intercept"),
        n_sim=n_sim,
        level=level,
        randomized=randomized,
        stacked=stacked,
        seed=seed,
        out=out,
    )
    data = read_data(config)
    if data.n != result.n or data.fingerprint != result.fingerprint:
        raise click.ClickException(
            f"Data in {config.input} do not match the fitted sample "
            f"({data.n} vs {result.n} units)"
        )
    value = loglik(result.theta, data, result.kind)
    if abs(value - result.loglik) > 1e-8 * (1 + abs(value)):
        logger.warning(
            f"Recomputed log-likelihood {value:.10f} differs from the stored "
            f"{result.loglik:.10f}"
        )

    rng = np.random.default_rng(config.seed)
    envelope = residual_envelope(
        result,
        data,
        n_sim=config.n_sim,
        level=config.level,
        rng=rng,
        randomized=config.randomized,
        stacked=config.stacked,
    )
    classification = pd.DataFrame(
        {
            "unit": np.arange(data.n),
            "selected": data.c.astype(int),
            "eps_hat": result.eps_hat,
            "classification": [c.value for c in result.classifications],
        }
    )
    directory = config.out or Path("diagnostics")
    directory.mkdir(parents=True, exist_ok=True)
    envelope.to_csv(directory / "residuals.csv", index=False)
    classification.to_csv(directory / "classification.csv", index=False)
    logger.info(f"Residuals and classification written to {directory}")
    click.echo(_counts_line(detection_summary(result.classifications)))


@cli.command("curves")
@click.option("--nu1", "nu1", type=float, multiple=True, default=(0.1, 0.5, 0.9))
@click.option("--nu2", "nu2", type=float, multiple=True, default=(0.1, 0.5))
@click.option("--x-min", type=float, default=-4.0)
@click.option("--x-max", type=float, default=4.0)
@click.option("--points", help="Grid size", type=click.IntRange(min=2), default=161)
@click.option(
    "--normal/--no-normal", help="Include the normal limit", default=True
)
@click.option(
    "--out", type=click.Path(dir_okay=False, path_type=Path), default="curves.csv"
)
def cli_curves(
    nu1: tuple[float, ...],
    nu2: tuple[float, ...],
    x_min: float,
    x_max: float,
    points: int,
    normal: bool,
    out: Path,
):
    """Tabulate the selection-correction function and its derivative

    One row per grid point and ``(nu1, nu2)`` combination, the normal limit
    labelled ``normal``.
    """
    if not x_min < x_max:
        raise click.UsageError("--x-min must be smaller than --x-max")
    try:
        table = lambda_curve_export(
            nu1, nu2, np.linspace(x_min, x_max, points), include_normal=normal
        )
    except ValueError as error:
        raise click.ClickException(str(error)) from error
    table.to_csv(out, index=False)
    logger.info(f"Curves written to {out}")

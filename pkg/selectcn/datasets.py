import logging
import os
from pathlib import Path

import numpy as np
import pandas as pd

from selectcn.model import SelectionData, read_csv

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "SELECTCN_DATA_DIR"

# public column names of the labour-supply data and their short forms
MROZ_RENAME = {
    "huswage": "hwage",
    "kids5": "youngkids",
    "mtr": "tax",
    "fatheduc": "feduc",
}
MROZ_X = ["educ", "city"]
MROZ_W = MROZ_X + ["hwage", "youngkids", "tax", "feduc"]

RAND_COVARIATES = [
    "logc",
    "idp",
    "lpi",
    "fmde",
    "physlm",
    "disea",
    "hlthg",
    "hlthf",
    "hlthp",
    "linc",
    "lfam",
    "educdec",
    "xage",
    "female",
    "child",
    "fchild",
    "black",
]


def data_path(name: str) -> Path | None:
    """Location of an external data file in the directory named by
    ``SELECTCN_DATA_DIR``, None if unset or absent"""
    if (directory := os.environ.get(DATA_DIR_ENV)) is None:
        return None
    path = Path(directory) / name
    return path if path.is_file() else None


def _require(df: pd.DataFrame, columns: list[str], source) -> None:
    if missing := [col for col in columns if col not in df.columns]:
        raise ValueError(f"Column(s) {missing} not found in {source}")


def mroz_frame(path: Path | str) -> pd.DataFrame:
    """Labour-supply data with the log wage, missing for non-participants"""
    df = read_csv(path).rename(columns=MROZ_RENAME)
    _require(df, ["lfp", "wage", *MROZ_W], path)
    participating = df["lfp"] == 1
    if np.any(df.loc[participating, "wage"] <= 0):
        raise ValueError("Participating women must have a positive wage")
    df["lwage"] = np.log(df["wage"].where(participating))
    return df


def load_mroz(path: Path | str) -> SelectionData:
    """Wage-offer selection sample: ``log(wage)`` on education and city, labour
    force participation additionally on husband's wage, young children,
    marginal tax rate and father's education"""
    df = mroz_frame(path)
    logger.info(f"Read {len(df)} units from {path}")
    return SelectionData.from_frame(df, "lwage", "lfp", x=MROZ_X, w=MROZ_W)


def rand_frame(path: Path | str) -> pd.DataFrame:
    """Study year 2 of the health-insurance data with known education, and the
    log of medical expenses where they are positive"""
    df = read_csv(path)
    _require(df, ["year", "meddol", "binexp", *RAND_COVARIATES], path)
    df = df[(df["year"] == 2) & df["educdec"].notna()].reset_index(drop=True)
    positive = df["binexp"] == 1
    if np.any(df.loc[positive, "meddol"] <= 0):
        raise ValueError("Units with `binexp` = 1 must have positive expenses")
    df["lnmeddol"] = np.log(df["meddol"].where(positive))
    return df


def load_rand(path: Path | str) -> SelectionData:
    """Medical-expense selection sample with identical covariates in both
    equations"""
    df = rand_frame(path)
    logger.info(f"Read {len(df)} units from {path}")
    return SelectionData.from_frame(
        df, "lnmeddol", "binexp", x=RAND_COVARIATES, w=RAND_COVARIATES
    )

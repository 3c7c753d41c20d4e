from pathlib import Path

import numpy as np
import pytest

from selectcn.config import EcmOptions
from selectcn.estimation import fit
from selectcn.model import ModelKind, Theta
from selectcn.simulation import ErrorLaw, SimDesign, generate_dataset

here = Path(__file__).parent
TEST_DATA_DIR = here / "data"


def theta_sln(**kwargs) -> Theta:
    values = dict(beta=[1.0, 0.5], gamma=[0.6745, 0.3, -0.5], sigma2=1.0, rho=0.6)
    return Theta(**{**values, **kwargs})


def theta_slcn(**kwargs) -> Theta:
    return theta_sln(**{"nu1": 0.2, "nu2": 0.3, **kwargs})


@pytest.fixture(scope="session")
def normal_data():
    design = SimDesign(n=400, law=ErrorLaw.normal)
    yield generate_dataset(design, np.random.default_rng(1))


@pytest.fixture(scope="session")
def cn_data():
    design = SimDesign(n=600, law=ErrorLaw.cn, nu1=0.2, nu2=0.1)
    yield generate_dataset(design, np.random.default_rng(2))


@pytest.fixture(scope="session")
def small_data():
    design = SimDesign(n=40, law=ErrorLaw.cn, nu1=0.3, nu2=0.3)
    yield generate_dataset(design, np.random.default_rng(3))


@pytest.fixture(scope="session")
def sln_fit(normal_data):
    yield fit(normal_data, ModelKind.sln, EcmOptions(tol=1e-10, max_iter=2000))


@pytest.fixture(scope="session")
def slcn_fit(cn_data):
    yield fit(cn_data, ModelKind.slcn, EcmOptions(tol=1e-8, max_iter=3000))

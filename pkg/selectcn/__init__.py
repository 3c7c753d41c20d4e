import logging
from importlib.metadata import version

from selectcn.cli import cli  # noqa
from selectcn.config import EcmOptions, InitMethod, RunConfig  # noqa
from selectcn.core import estimate  # noqa
from selectcn.datasets import load_mroz, load_rand  # noqa
from selectcn.estimation import e_step, fit, heckman_two_step, probit_fit  # noqa
from selectcn.inference import (  # noqa
    Classification,
    FitResult,
    classify_units,
    lr_test,
    quantile_residuals,
    residual_envelope,
)
from selectcn.model import (  # noqa
    ModelKind,
    SelectionData,
    Theta,
    lambda_cn,
    lambda_cn_prime,
    loglik,
)
from selectcn.simulation import (  # noqa
    ErrorLaw,
    SimDesign,
    generate_dataset,
    run_monte_carlo,
)

# set up logging
logging.basicConfig(
    format="%(asctime)s %(levelname)-8s %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
    level=logging.INFO,
)

logger = logging.getLogger(__name__)

__version__ = version("selectcn")

from selectcn.estimation.ecm import (  # noqa
    EcmTrace,
    EStepQuantities,
    cm_step,
    e_step,
    fit,
    q_function,
)
from selectcn.estimation.probit import probit_fit  # noqa
from selectcn.estimation.twostep import heckman_two_step  # noqa

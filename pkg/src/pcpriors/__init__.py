"""Penalised complexity priors: distance-based priors that shrink towards a base model."""

from . import analysis, bym, core, multivariate, univariate
from .core import (
    DistanceFunction,
    PCPrior1D,
    TailCondition,
    calibrate_rate,
    distance_from_kld,
    kld_gaussian,
    pc_density,
    prior_on_distance_scale,
)
from .errors import (
    DegenerateComponentError,
    DomainError,
    FeasibilityError,
    NumericalError,
    PCPriorError,
    UnsupportedError,
)
from .univariate import (
    AR1Prior,
    ExchangeableCorrPrior,
    ExponentialDofPrior,
    PrecisionPrior,
    StudentTPrior,
    UniformDofPrior,
)

__version__ = "0.1.0"

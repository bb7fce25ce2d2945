"""Location-scale calibration of generalized Bayes posteriors.

Core pieces: a Huber-loss random-intercept mixed model, a data-augmented
Gibbs sampler for the tempered posterior, plug-in sandwich estimates, and
the affine calibration of posterior draws.
"""

from gbcalib.calibration import (
    CalibratedDraws,
    SandwichEstimates,
    build_omega,
    calibrate_draws,
    credible_interval,
    posterior_cov,
    sandwich_at,
)
from gbcalib.errors import (
    BadLevel,
    DimensionMismatch,
    EmptyDraws,
    GbcalibError,
    NoConvergence,
    NotPsd,
    TooFewGroups,
    TooFewReps,
)
from gbcalib.estimator import (
    FitResult,
    WaldInterval,
    fit_penalized,
    map_center,
    one_step_newton_center,
    posterior_mean_center,
    wald_interval,
)
from gbcalib.linalg import SpdFactor, solve_spd, sym_sqrt
from gbcalib.model import (
    Group,
    GroupedDataset,
    HuberSpec,
    WhitenedDataset,
    WorkingCov,
    hessian,
    k_hat,
    loss,
    score,
    whiten,
)
from gbcalib.penalty import RidgeSpec, rho, rho_grad, rho_hess
from gbcalib.sampler import DrawMatrix, SamplerConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "BadLevel",
    "CalibratedDraws",
    "DimensionMismatch",
    "DrawMatrix",
    "EmptyDraws",
    "FitResult",
    "GbcalibError",
    "Group",
    "GroupedDataset",
    "HuberSpec",
    "NoConvergence",
    "NotPsd",
    "RidgeSpec",
    "SamplerConfig",
    "SandwichEstimates",
    "SpdFactor",
    "TooFewGroups",
    "TooFewReps",
    "WaldInterval",
    "WhitenedDataset",
    "WorkingCov",
    "build_omega",
    "calibrate_draws",
    "credible_interval",
    "fit_penalized",
    "hessian",
    "k_hat",
    "loss",
    "map_center",
    "one_step_newton_center",
    "posterior_cov",
    "posterior_mean_center",
    "rho",
    "rho_grad",
    "rho_hess",
    "run_chain",
    "sandwich_at",
    "score",
    "solve_spd",
    "sym_sqrt",
    "wald_interval",
    "whiten",
]

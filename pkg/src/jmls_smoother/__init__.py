"""Two-filter smoothing for jump Markov linear systems.

A forward Gaussian-mixture filter and a backward information filter over
likelihood mixtures are combined into the smoothed hybrid posterior
``p(x_k, z_k | y_1..y_N)``. Component counts are kept in check by greedy
Kullback-Leibler reduction (forward) and by range-space grouped likelihood
reduction (backward). Exact oracles (mode-sequence enumeration, an RTS
smoother and a quadrature recursion) are included for verification.
"""

from .backward import BackwardState, run_backward
from .errors import JmlsError, ModelError, NumericalError, OracleLimitError, RangeSpaceError
from .fileio import load_dataset, load_mixtures, load_model, save_dataset, save_mixtures, save_model
from .forward import ForwardState, run_forward
from .likelihood import (
    LikelihoodComponent,
    LikelihoodMixture,
    LikelihoodSet,
    backward_propagate,
    measurement_correct,
    reduce_likelihoods,
)
from .mixture import (
    GaussianComponent,
    GaussianMixture,
    GaussianSet,
    differential_entropy_delta,
    kl_merge_bound,
    moment_match_merge,
    reduce_mixture,
    reduce_set,
)
from .model import Dataset, JmlsModel, ModeParams, Timing, discretize_msd, simulate, validate_model
from .oracle import (
    DensityGrid,
    auto_axes,
    bif_quadrature,
    enumerate_smoother,
    evaluate_grid,
    grid_kl,
    grid_l1,
    grid_max_abs,
    rts_smoother,
)
from .smoother import SmoothedState, SmootherResult, run_smoother, smooth

__version__ = "0.1.0"

__all__ = [
    "BackwardState",
    "Dataset",
    "DensityGrid",
    "ForwardState",
    "GaussianComponent",
    "GaussianMixture",
    "GaussianSet",
    "JmlsError",
    "JmlsModel",
    "LikelihoodComponent",
    "LikelihoodMixture",
    "LikelihoodSet",
    "ModeParams",
    "ModelError",
    "NumericalError",
    "OracleLimitError",
    "RangeSpaceError",
    "SmoothedState",
    "SmootherResult",
    "Timing",
    "auto_axes",
    "backward_propagate",
    "bif_quadrature",
    "differential_entropy_delta",
    "discretize_msd",
    "enumerate_smoother",
    "evaluate_grid",
    "grid_kl",
    "grid_l1",
    "grid_max_abs",
    "kl_merge_bound",
    "load_dataset",
    "load_mixtures",
    "load_model",
    "measurement_correct",
    "moment_match_merge",
    "reduce_likelihoods",
    "reduce_mixture",
    "reduce_set",
    "rts_smoother",
    "run_backward",
    "run_forward",
    "run_smoother",
    "save_dataset",
    "save_mixtures",
    "save_model",
    "simulate",
    "smooth",
    "validate_model",
]

"""Deconvolution density estimation by penalized maximum likelihood.

Estimates the density of a latent variable X from contaminated
observations Y = X + e, where the error e follows a known parametric
family or an empirical distribution built from a pure-error sample.
"""

from .distributions import ErrorModel, TrueDistribution, read_sample
from .basis import BasisSet, default_constraint_points, gram_matrix
from .solver import Objective, SimplexOptions, nelder_mead, penalized_nll
from .pipeline import DensityEstimate, FitConfig, fit_density
from .estimator import DeconvolutionDensity
from .evaluation import Scenario, ScenarioResult, ise, run_scenario

__all__ = [
    "ErrorModel",
    "TrueDistribution",
    "read_sample",
    "BasisSet",
    "default_constraint_points",
    "gram_matrix",
    "Objective",
    "SimplexOptions",
    "nelder_mead",
    "penalized_nll",
    "DensityEstimate",
    "FitConfig",
    "fit_density",
    "DeconvolutionDensity",
    "Scenario",
    "ScenarioResult",
    "ise",
    "run_scenario",
]

__version__ = "0.1.0"

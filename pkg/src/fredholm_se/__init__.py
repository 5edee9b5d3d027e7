"""Semiparametric estimation with neural-network solutions of Fredholm integral equations.

The estimator alternates between a step on the parameter of interest,
which roots a sample-average estimating function, and steps on a small
tanh network that solves the integral equation defining the nuisance
correction in that estimating function.
"""

from .bilevel import BiLevelConfig, EstimateReport, dna_se, loss_psi, polynomial_estimate
from .errors import (
    ConfigurationError,
    DivergenceError,
    FredholmSEError,
    InputShapeError,
    NumericError,
    ParseError,
    RankDeficiencyWarning,
)
from .fredholm import FredholmProblem, SecondKind, Tikhonov, loss_K, residual, solve_polynomial
from .nn import NetworkArch, NetworkWeights, backprop, forward, init_weights
from .quadrature import Domain, QuadratureGrid, sample_grid
from .rng import Rng, derive_seed

__version__ = "0.1.0"

__all__ = [
    "BiLevelConfig",
    "ConfigurationError",
    "DivergenceError",
    "Domain",
    "EstimateReport",
    "FredholmProblem",
    "FredholmSEError",
    "InputShapeError",
    "NetworkArch",
    "NetworkWeights",
    "NumericError",
    "ParseError",
    "QuadratureGrid",
    "RankDeficiencyWarning",
    "Rng",
    "SecondKind",
    "Tikhonov",
    "backprop",
    "derive_seed",
    "dna_se",
    "forward",
    "init_weights",
    "loss_K",
    "loss_psi",
    "polynomial_estimate",
    "residual",
    "sample_grid",
    "solve_polynomial",
]

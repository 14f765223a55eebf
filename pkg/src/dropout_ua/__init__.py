"""Dropout networks that approximate a given deterministic network.

Two constructions are provided: the coefficient-weighted random blow-up of a
base network (:mod:`dropout_ua.blowup`) and dropout trees with a random
precomposition layer (:mod:`dropout_ua.tree`, :mod:`dropout_ua.precompose`).
"""

from .activations import IDENTITY, RELU, SIGMOID, TANH, Activation, leaky_relu
from .blowup import BlowupNetwork, avg_filt_eval, blowup, corollary_compose, mean_eval, sample_eval
from .coefficients import (CoefficientTable, coeffs_closed_form, coeffs_general, mu_identity_check,
                           verify_decomposition)
from .errors import (BaseFitFailedError, BudgetExceededError, DropoutUAError, FitDivergedError,
                     InadmissibleActivationError, InvalidProbabilityError, OverflowRadiusError,
                     PreconditionError, ShapeError, StructuralError, UnsupportedModelError)
from .estimators import ErrorReport, Seminorm, TargetFunction, exceed_prob, lq_moment
from .filters import FilterModel, dropconnect_model, from_pmf, node_dropout_model, unit_mass
from .fitting import Architecture, fit_base_network
from .network import Layer, Network, eval_masked, eval_network, network
from .precompose import Precomposition, nn_eval, precomposition, q_condition_check, xi_values
from .rng import RandomSource
from .tree import DropoutTree, check_approp, eval_phi, grow_full_tree, radii

__version__ = "0.1.0"

__all__ = [
    "IDENTITY",
    "RELU",
    "SIGMOID",
    "TANH",
    "Activation",
    "leaky_relu",
    "BlowupNetwork",
    "avg_filt_eval",
    "blowup",
    "corollary_compose",
    "mean_eval",
    "sample_eval",
    "CoefficientTable",
    "coeffs_closed_form",
    "coeffs_general",
    "mu_identity_check",
    "verify_decomposition",
    "BaseFitFailedError",
    "BudgetExceededError",
    "DropoutUAError",
    "FitDivergedError",
    "InadmissibleActivationError",
    "InvalidProbabilityError",
    "OverflowRadiusError",
    "PreconditionError",
    "ShapeError",
    "StructuralError",
    "UnsupportedModelError",
    "ErrorReport",
    "Seminorm",
    "TargetFunction",
    "exceed_prob",
    "lq_moment",
    "FilterModel",
    "dropconnect_model",
    "from_pmf",
    "node_dropout_model",
    "unit_mass",
    "Architecture",
    "fit_base_network",
    "Layer",
    "Network",
    "eval_masked",
    "eval_network",
    "network",
    "Precomposition",
    "nn_eval",
    "precomposition",
    "q_condition_check",
    "xi_values",
    "RandomSource",
    "DropoutTree",
    "check_approp",
    "eval_phi",
    "grow_full_tree",
    "radii",
    "__version__",
]

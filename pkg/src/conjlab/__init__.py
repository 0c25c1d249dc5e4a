"""Numerical topological conjugacy for linear systems with exponential dichotomy."""
from .errors import (ConjlabError, ContractionViolated, ConvergenceFailure, EstimationFailure,
                     HypothesisViolated, IntegrationFailure, InvalidArgument, NumericOverflow,
                     QuadratureFailure)

__version__ = "0.1.0"

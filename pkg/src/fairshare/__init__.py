"""Causal estimation and Shapley cost sharing for parallel online experiments."""

from .coredata import ExperimentSet, ObservationTable, parse_table, power_set, read_table, write_table
from .costsharing import (
    Game,
    conditional_attribution,
    shapley_exact,
    shapley_sampled,
    weighted_average_share,
    weighted_shapley,
)
from .estimators import CoalitionEstimates, estimate_all, fit_outcome
from .propensity import FitConfig, coalition_weights, fit_empirical, fit_factorized, fit_joint, fit_propensity
from .uncertainty import BootstrapConfig, bootstrap

__version__ = "0.1.0"

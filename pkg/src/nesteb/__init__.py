"""Nonparametric empirical Bayes shrinkage for heteroscedastic data.

NEST estimates many Gaussian means (x_i, sigma_i) by plugging a
two-dimensional weighted kernel density estimate into Tweedie's formula,
with bandwidths selected by a cross-fitted unbiased risk criterion. The
package also ships the classical competitor rules, exponential-family
posterior-mean formulas, and a reproducible simulation lab.
"""

__version__ = "0.1.0"

from .data import (
    Bandwidths,
    DensityEval,
    FoldAssignment,
    HeteroSample,
    kfold_split,
    validate_sample,
)
from .estimators import (
    EstimatorSpec,
    KGroups,
    Naive,
    Nest,
    Oracle,
    Scaled,
    TF,
    estimate,
    k_groups_fit,
    nest_point,
    oracle_posterior_mean,
    scaled_point,
    stabilize_sign,
    tf_point,
    truncate_estimates,
)
from .kernel import KernelContext, density_eval, density_eval_batch, sigma_weights
from .priors import NormalPrior, SparseMixPrior, TwoPointPrior, point_mass
from .simulation import (
    SimScenario,
    TwoValueSigma,
    UniformSigma,
    draw_scenario,
    run_bias_experiment,
    run_mse_study,
    scenario_from_ratio,
    selection_bias_formula,
    solve_sigma_M,
    tf_average_shrinkage,
)
from .sure import (
    SureGrid,
    SureReport,
    default_grid,
    sure_compound_cv,
    sure_point,
    sure_unbiasedness_check,
    tune,
)

__all__ = [
    "Bandwidths",
    "DensityEval",
    "EstimatorSpec",
    "FoldAssignment",
    "HeteroSample",
    "KGroups",
    "KernelContext",
    "Naive",
    "Nest",
    "NormalPrior",
    "Oracle",
    "Scaled",
    "SimScenario",
    "SparseMixPrior",
    "SureGrid",
    "SureReport",
    "TF",
    "TwoPointPrior",
    "TwoValueSigma",
    "UniformSigma",
    "default_grid",
    "density_eval",
    "density_eval_batch",
    "draw_scenario",
    "estimate",
    "k_groups_fit",
    "kfold_split",
    "nest_point",
    "oracle_posterior_mean",
    "point_mass",
    "run_bias_experiment",
    "run_mse_study",
    "scaled_point",
    "scenario_from_ratio",
    "selection_bias_formula",
    "sigma_weights",
    "solve_sigma_M",
    "stabilize_sign",
    "sure_compound_cv",
    "sure_point",
    "sure_unbiasedness_check",
    "tf_average_shrinkage",
    "tf_point",
    "truncate_estimates",
    "tune",
    "validate_sample",
]

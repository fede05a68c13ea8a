"""Bayesian continuous-time hidden Markov models for irregular panel data."""

from .model import (ModelSpec, ModelSpecError, ParameterLayout, RateModel,
                    SplineConfig, build_model_spec, parameter_layout,
                    preset_names)
from .records import RecordError, SubjectRecord, Visit
from .likelihood import (LikelihoodError, LikelihoodEvaluator,
                         LikelihoodOptions, baseline_distribution,
                         initial_distribution, subject_log_likelihood,
                         total_log_likelihood)
from .priors import (ConstraintSet, PriorSpec, default_constraints,
                     default_priors, from_natural, log_prior, to_natural)
from .mcmc import (Chain, MCMCError, MCMCSettings, default_blocks,
                   initial_point, mcmc_run)

__version__ = "0.1.0"

from .estimator import ProgressionHMM
from .fitting import fit_chains
from .simulate import Scenario, scenario_presets, simulate_cohort

__all__ = [
    "ModelSpec", "ModelSpecError", "ParameterLayout", "RateModel",
    "SplineConfig", "build_model_spec", "parameter_layout", "preset_names",
    "RecordError", "SubjectRecord", "Visit",
    "LikelihoodError", "LikelihoodEvaluator", "LikelihoodOptions",
    "baseline_distribution", "initial_distribution", "subject_log_likelihood",
    "total_log_likelihood",
    "ConstraintSet", "PriorSpec", "default_constraints", "default_priors",
    "from_natural", "log_prior", "to_natural",
    "Chain", "MCMCError", "MCMCSettings", "default_blocks", "initial_point",
    "mcmc_run",
    "ProgressionHMM", "fit_chains",
    "Scenario", "scenario_presets", "simulate_cohort",
]

"""Scikit-learn style front end: fit panel data, keep posterior chains."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dataio import read_panel_csv
from .fitting import fit_chains
from .likelihood import LikelihoodEvaluator, LikelihoodOptions
from .mcmc import MCMCSettings
from .model import build_model_spec, parameter_layout
from .priors import default_constraints, default_priors
from .records import SubjectRecord
from .summarize import posterior_summary


class ProgressionHMM(BaseEstimator):
    """Bayesian continuous-time hidden Markov model for panel data.

    fit(X) accepts a list of SubjectRecord or a panel CSV path and samples
    the posterior with blockwise adaptive Metropolis.  Fitted state lives in
    trailing-underscore attributes (chains_, draws_, summary_, ...), and the
    estimator plays by the usual get_params/set_params rules so it composes
    with model-selection tooling.
    """

    def __init__(self, preset="mcsa7", iterations=20000, burnin=10000,
                 thin=10, chains=1, seed=0, workers=1,
                 enrollment_correction=True, death_bias=True,
                 prior_overrides=None, disable_constraints=(), blocks=None):
        self.preset = preset
        self.iterations = iterations
        self.burnin = burnin
        self.thin = thin
        self.chains = chains
        self.seed = seed
        self.workers = workers
        self.enrollment_correction = enrollment_correction
        self.death_bias = death_bias
        self.prior_overrides = prior_overrides
        self.disable_constraints = disable_constraints
        self.blocks = blocks

    # -- plumbing -------------------------------------------------------------

    def _coerce(self, X):
        spec = build_model_spec(self.preset)
        if isinstance(X, str):
            return spec, read_panel_csv(X, spec)
        if isinstance(X, (list, tuple)) and all(isinstance(s, SubjectRecord) for s in X):
            return spec, list(X)
        raise TypeError("X must be a panel CSV path or a list of SubjectRecord")

    def _options(self) -> LikelihoodOptions:
        return LikelihoodOptions(enrollment_correction=self.enrollment_correction,
                                 death_bias=self.death_bias)

    def _check_fitted(self):
        if not hasattr(self, "chains_"):
            raise NotFittedError("this ProgressionHMM instance is not fitted yet")

    # -- estimator API ----------------------------------------------------------

    def fit(self, X, y=None):
        spec, dataset = self._coerce(X)
        layout = parameter_layout(spec)
        priors = default_priors(spec, layout, overrides=self.prior_overrides)
        settings = MCMCSettings(iterations=self.iterations, burnin=self.burnin,
                                thin=self.thin, seed=self.seed,
                                workers=self.workers, blocks=self.blocks)
        self.spec_ = spec
        self.layout_ = layout
        self.priors_ = priors
        self.chains_ = fit_chains(dataset, spec, priors, settings,
                                  options=self._options(), n_chains=self.chains,
                                  disabled_constraints=self.disable_constraints)
        self.draws_ = np.vstack([c.draws for c in self.chains_])
        self.params_mean_ = self.draws_.mean(axis=0)
        self.summary_ = posterior_summary([c.draws for c in self.chains_],
                                          layout.names)
        self.n_subjects_ = len(dataset)
        return self

    def log_likelihood(self, X, params=None) -> float:
        """Total data log-likelihood at params (default: the posterior mean)."""
        self._check_fitted()
        _, dataset = self._coerce(X)
        u = self.params_mean_ if params is None else np.asarray(params, dtype=float)
        with LikelihoodEvaluator(self.spec_, self.layout_, dataset,
                                 self._options(), workers=self.workers) as ev:
            return ev.total(u)

    def score(self, X, y=None) -> float:
        """Mean per-subject log-likelihood at the posterior mean."""
        _, dataset = self._coerce(X)
        return self.log_likelihood(X) / len(dataset)

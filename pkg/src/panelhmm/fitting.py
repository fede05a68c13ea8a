"""Multi-chain fit orchestration shared by the estimator and the CLI.

Chains are independent runs distinguished only by their chain index, so
results are identical whether they execute sequentially or on a process pool.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .likelihood import LikelihoodOptions
from .mcmc import MCMCSettings, mcmc_run
from .model import ModelSpec, parameter_layout
from .priors import default_constraints, default_priors


def _run_one(spec_dict, dataset, prior_mean, prior_sd, disabled, settings_dict,
             options_dict, chain_index):
    spec = ModelSpec.from_dict(spec_dict)
    layout = parameter_layout(spec)
    priors = default_priors(spec, layout)
    priors.mean = np.asarray(prior_mean)
    priors.sd = np.asarray(prior_sd)
    constraints = default_constraints(spec, layout).without(*disabled)
    settings = MCMCSettings(**settings_dict)
    options = LikelihoodOptions(**options_dict)
    return mcmc_run(dataset, spec, priors, constraints, settings, layout,
                    options=options, chain_index=chain_index)


def fit_chains(dataset, spec: ModelSpec, priors, settings: MCMCSettings,
               options: LikelihoodOptions | None = None, n_chains: int = 1,
               disabled_constraints=(), constraints=None):
    """Run n_chains independent chains; parallel across processes when the
    worker budget allows, one likelihood worker each in that case."""
    options = options or LikelihoodOptions()
    layout = parameter_layout(spec)
    if constraints is None:
        constraints = default_constraints(spec, layout).without(*disabled_constraints)

    parallel = n_chains > 1 and settings.workers > 1
    if not parallel:
        return [mcmc_run(dataset, spec, priors, constraints, settings, layout,
                         options=options, chain_index=c)
                for c in range(n_chains)]

    per_chain = settings.to_dict()
    per_chain["workers"] = 1
    args = (spec.to_dict(), dataset, priors.mean, priors.sd,
            tuple(disabled_constraints), per_chain,
            {"enrollment_correction": options.enrollment_correction,
             "death_bias": options.death_bias})
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(n_chains, settings.workers),
                                 mp_context=ctx) as pool:
            futures = [pool.submit(_run_one, *args, c) for c in range(n_chains)]
            return [f.result() for f in futures]
    except (ValueError, OSError):
        return [mcmc_run(dataset, spec, priors, constraints, settings, layout,
                         options=options, chain_index=c)
                for c in range(n_chains)]

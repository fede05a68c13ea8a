"""Blockwise random-walk Metropolis with multivariate normal proposals.

Proposal covariances adapt from the trailing sample covariance during burn-in
only; after burn-in the kernel is frozen so the retained draws target the
exact posterior.  Likelihood failures on wild proposals (rate overflow,
numerically dead conditioning) reject the proposal rather than abort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .likelihood import LikelihoodError, LikelihoodEvaluator, LikelihoodOptions
from .model import ModelSpec, ParameterLayout, parameter_layout
from .priors import ConstraintSet, PriorSpec, log_prior, to_natural
from .rates import RateError
from .emissions import EmissionError


class MCMCError(RuntimeError):
    pass


@dataclass
class MCMCSettings:
    iterations: int = 20000
    burnin: int = 10000
    thin: int = 10
    seed: int = 0
    workers: int = 1
    blocks: list | None = None          # lists of layout block names
    adapt_interval: int = 100
    adapt_window: int = 1000
    initial_step: float = 0.1           # times the prior sd, before adaptation

    def validate(self):
        if self.iterations <= 0 or self.thin <= 0:
            raise MCMCError("iterations and thin must be positive")
        if not (0 <= self.burnin < self.iterations):
            raise MCMCError("burn-in must lie inside the run")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations, "burnin": self.burnin,
            "thin": self.thin, "seed": self.seed, "workers": self.workers,
            "blocks": self.blocks, "adapt_interval": self.adapt_interval,
            "adapt_window": self.adapt_window, "initial_step": self.initial_step,
        }


@dataclass
class Chain:
    """Retained posterior draws (unconstrained scale) plus bookkeeping."""

    names: tuple
    draws: np.ndarray                    # (n_retained, n_params)
    log_posterior: np.ndarray
    accepted: dict
    attempted: dict
    seed: int
    settings: dict
    proposal_covariances: dict = field(default_factory=dict)
    adaptation_iterations: list = field(default_factory=list)

    @property
    def n_retained(self) -> int:
        return self.draws.shape[0]

    def acceptance_rates(self) -> dict:
        return {b: self.accepted[b] / max(1, self.attempted[b])
                for b in self.accepted}


def default_blocks(spec: ModelSpec, layout: ParameterLayout) -> list:
    """Fixed update rotation: rate coefficients (with spline and decay pair),
    biomarker means, score/diagnosis responses, initial state."""
    rate = [rm.group for rm in spec.rate_models]
    rate = list(dict.fromkeys(rate))
    if spec.spline is not None:
        rate.append("spline")
    if spec.has_death_bias:
        rate.append("bias")
    biomarker, other = [], []
    for ch in spec.emission_channels:
        if ch.kind == "gaussian-partition":
            biomarker.append(ch.block)
        else:
            other.append(ch.block)
    blocks = [rate]
    if biomarker:
        blocks.append(biomarker)
    if other:
        blocks.append(other)
    if layout.has_block("init"):
        blocks.append(["init"])
    return blocks


def initial_point(priors: PriorSpec, constraints: ConstraintSet,
                  rng: np.random.Generator, layout: ParameterLayout,
                  max_tries: int = 10000) -> np.ndarray:
    """Prior draw satisfying the constraint set, by rejection."""
    batch = 256
    tried = 0
    while tried < max_tries:
        n = min(batch, max_tries - tried)
        u = priors.sample(rng, size=n)
        ok = constraints.satisfied_batch(to_natural(u, layout))
        hits = np.flatnonzero(ok)
        if len(hits):
            return u[hits[0]].copy()
        tried += n
    raise MCMCError(
        f"no feasible prior draw in {max_tries} attempts; constraints may be "
        "jointly near-infeasible")


class _BlockProposal:
    def __init__(self, slots, prior_sd, initial_step):
        self.slots = np.asarray(slots, dtype=int)
        d = len(slots)
        self.dim = d
        self.prior_sd = prior_sd[self.slots]
        self.factor = np.diag(initial_step * self.prior_sd) * (2.38 / math.sqrt(d))
        self.log_scale = 0.0
        self.history = []
        self.target = 0.234 if d > 4 else 0.35
        self._acc_since = 0
        self._att_since = 0

    def propose(self, u, rng):
        z = rng.standard_normal(self.dim)
        prop = u.copy()
        prop[self.slots] += math.exp(self.log_scale) * (self.factor @ z)
        return prop

    def record(self, u, accepted, window):
        self.history.append(u[self.slots].copy())
        if len(self.history) > window:
            del self.history[:len(self.history) - window]
        self._att_since += 1
        self._acc_since += int(accepted)

    def adapt(self):
        if self._att_since:
            rate = self._acc_since / self._att_since
            self.log_scale += 0.7 * (rate - self.target)
            self._acc_since = 0
            self._att_since = 0
        if len(self.history) >= max(10, self.dim + 2):
            sample = np.asarray(self.history)
            cov = np.atleast_2d(np.cov(sample, rowvar=False))
            # per-coordinate jitter: slots live on wildly different scales, so
            # an isotropic floor would swamp the tight ones and stall the chain
            cov = (2.38 ** 2 / self.dim) * (cov + np.diag((1e-3 * self.prior_sd) ** 2))
            try:
                self.factor = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                self.factor = np.diag(np.sqrt(np.diag(cov)))

    def covariance(self):
        scale = math.exp(self.log_scale)
        return scale ** 2 * (self.factor @ self.factor.T)


def mcmc_run(dataset, spec: ModelSpec, priors: PriorSpec,
             constraints: ConstraintSet, settings: MCMCSettings,
             layout: ParameterLayout | None = None,
             options: LikelihoodOptions | None = None,
             chain_index: int = 0,
             start: np.ndarray | None = None) -> Chain:
    """Sample the posterior (or the truncated prior when dataset is empty)."""
    settings.validate()
    layout = layout or parameter_layout(spec)
    rng = np.random.default_rng(np.random.SeedSequence((settings.seed, chain_index)))

    evaluator = None
    if dataset:
        evaluator = LikelihoodEvaluator(spec, layout, dataset, options,
                                        workers=settings.workers)

    def loglik(u):
        if evaluator is None:
            return 0.0
        try:
            return evaluator.total(u)
        except (RateError, EmissionError, LikelihoodError):
            return -np.inf

    block_names = settings.blocks or default_blocks(spec, layout)
    blocks = []
    for names in block_names:
        slots = []
        for bn in names:
            sl = layout.block(bn)
            slots.extend(range(sl.start, sl.stop))
        blocks.append(_BlockProposal(slots, priors.sd, settings.initial_step))

    if start is not None:
        u = start.copy()
        lp_prior = log_prior(u, priors, constraints, layout)
        ll = loglik(u)
    else:
        # a feasible prior draw can still be absurd under the data; retry a
        # bounded number of times before giving up
        for _ in range(50):
            u = initial_point(priors, constraints, rng, layout)
            lp_prior = log_prior(u, priors, constraints, layout)
            ll = loglik(u)
            if np.isfinite(lp_prior + ll):
                break
    if not np.isfinite(lp_prior + ll):
        raise MCMCError(
            f"non-finite log-posterior at the initial point (prior {lp_prior}, "
            f"likelihood {ll})")

    n_retained = (settings.iterations - settings.burnin) // settings.thin
    draws = np.empty((n_retained, layout.size))
    lps = np.empty(n_retained)
    accepted = {i: 0 for i in range(len(blocks))}
    attempted = {i: 0 for i in range(len(blocks))}
    adaptation_iterations = []
    kept = 0

    try:
        for it in range(1, settings.iterations + 1):
            for bi, block in enumerate(blocks):
                prop = block.propose(u, rng)
                lp_prop = log_prior(prop, priors, constraints, layout)
                took = False
                if np.isfinite(lp_prop):
                    ll_prop = loglik(prop)
                    delta = (lp_prop + ll_prop) - (lp_prior + ll)
                    if delta >= 0 or math.log(rng.random()) < delta:
                        u, lp_prior, ll = prop, lp_prop, ll_prop
                        took = True
                attempted[bi] += 1
                accepted[bi] += int(took)
                if it <= settings.burnin:
                    block.record(u, took, settings.adapt_window)
            if it <= settings.burnin and it % settings.adapt_interval == 0:
                for block in blocks:
                    block.adapt()
                adaptation_iterations.append(it)
            if it > settings.burnin and (it - settings.burnin) % settings.thin == 0:
                draws[kept] = u
                lps[kept] = lp_prior + ll
                kept += 1
    finally:
        if evaluator is not None:
            evaluator.close()

    return Chain(
        names=layout.names,
        draws=draws[:kept],
        log_posterior=lps[:kept],
        accepted=accepted,
        attempted=attempted,
        seed=settings.seed,
        settings=settings.to_dict(),
        proposal_covariances={i: b.covariance() for i, b in enumerate(blocks)},
        adaptation_iterations=adaptation_iterations,
    )

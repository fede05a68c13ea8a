"""Panel-data log-likelihood.

Each subject contributes a forward product: an initial state vector at the
first visit, per-visit emission factors, and interval transition matrices
between visits.  An exactly observed death replaces the final emission with
rate-weighted transition densities.  Subjects enrolled after baseline get
their initial vector propagated from baseline and conditioned on the
enrollable states.

subject_log_likelihood is the readable reference; LikelihoodEvaluator
compiles a dataset into index arrays once and then evaluates any parameter
vector with batched linear algebra, which is what the sampler uses.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing
import numpy as np

from .emissions import channel_factor_rows, emission_vector
from .expm import matrix_exponential
from .kernel import RateContext, age_segments, interval_transition, segment_iyears
from .model import ModelSpec, ParameterLayout
from .rates import RateTable
from .records import SubjectRecord, effective_ntests


class LikelihoodError(ValueError):
    pass


@dataclass
class LikelihoodOptions:
    """Feature switches mirroring the model's two cohort corrections."""

    enrollment_correction: bool = True
    death_bias: bool = True


# ---------------------------------------------------------------------------
# Reference path
# ---------------------------------------------------------------------------

def baseline_distribution(u: np.ndarray, spec: ModelSpec,
                          layout: ParameterLayout) -> np.ndarray:
    """State distribution at the baseline age (fixed or softmax of xi)."""
    ns = spec.n_states
    pi = np.zeros(ns)
    if spec.initial_fixed is not None:
        pi[:] = spec.initial_fixed
        return pi
    xi = u[layout.block("init")]
    w = np.concatenate([[1.0], np.exp(xi)])
    w /= w.sum()
    for j, s in enumerate(spec.enrollment_support):
        pi[s - 1] = w[j]
    return pi


def initial_distribution(subject: SubjectRecord, u: np.ndarray, spec: ModelSpec,
                         layout: ParameterLayout, correction: bool = True) -> np.ndarray:
    """State distribution at the first visit.

    Propagates the baseline vector to the enrollment age with population
    rates; with correction, mass is restricted to the enrollable states and
    renormalized (the conditioning has no likelihood contribution itself).
    """
    pi0 = baseline_distribution(u, spec, layout)
    e = subject.enrollment_age
    if e < spec.baseline_age:
        raise LikelihoodError(
            f"subject {subject.id}: enrollment before baseline age")
    if e == spec.baseline_age:
        return pi0
    ctx = RateContext(spec, layout, u, subject.cov, enrollment_age=None)
    v = pi0 @ interval_transition(spec.baseline_age, e - spec.baseline_age, ctx)
    if not correction:
        return v
    keep = np.zeros(spec.n_states, dtype=bool)
    for s in spec.enrollment_support:
        keep[s - 1] = True
    v = np.where(keep, v, 0.0)
    mass = v.sum()
    if mass <= 0.0:
        raise LikelihoodError(
            f"subject {subject.id}: no surviving mass on enrollable states")
    return v / mass


def _death_weights(ctx: RateContext, death_age: float, death_idx: int) -> np.ndarray:
    """Instantaneous rates into death at the death age, one per live state."""
    Q = ctx.generator(math.floor(death_age))
    w = Q[:, death_idx].copy()
    w[death_idx] = 0.0
    return w


def subject_log_likelihood(subject: SubjectRecord, u: np.ndarray, spec: ModelSpec,
                           layout: ParameterLayout,
                           options: LikelihoodOptions | None = None) -> float:
    """Log of the forward product for one subject; -inf only when the data
    are impossible under the parameters (including numerically dead
    enrollment conditioning)."""
    options = options or LikelihoodOptions()
    try:
        v = initial_distribution(subject, u, spec, layout,
                                 correction=options.enrollment_correction)
    except LikelihoodError:
        return -np.inf
    bias_e = subject.enrollment_age if (options.death_bias and spec.has_death_bias) else None
    ctx = RateContext(spec, layout, u, subject.cov, enrollment_age=bias_e)
    ntests = effective_ntests(subject)
    logscale = 0.0
    prev_age = subject.visits[0].age
    for k, visit in enumerate(subject.visits):
        if k > 0:
            v = v @ interval_transition(prev_age, visit.age - prev_age, ctx)
            prev_age = visit.age
        v = v * emission_vector(visit, subject.cov, u, spec, layout, ntests=ntests[k])
        total = v.sum()
        if total <= 0.0:
            return -np.inf
        logscale += math.log(total)
        v = v / total
    if subject.died_at is not None:
        if spec.death_state is None:
            raise LikelihoodError("death record in a model without a death state")
        v = v @ interval_transition(prev_age, subject.died_at - prev_age, ctx)
        v = v * _death_weights(ctx, subject.died_at, spec.death_state - 1)
        total = v.sum()
        if total <= 0.0:
            return -np.inf
        logscale += math.log(total)
    return logscale


# ---------------------------------------------------------------------------
# Compiled evaluator
# ---------------------------------------------------------------------------

class _Plan:
    """Index arrays for one contiguous block of subjects."""

    def __init__(self, spec, layout, subjects, options, profile_ids):
        self.spec = spec
        self.layout = layout
        self.options = options
        ns = spec.n_states
        self.death_idx = spec.death_state - 1 if spec.death_state is not None else None
        bias_on = options.death_bias and spec.has_death_bias

        gen_index: dict = {}
        g_age, g_pid, g_iy = [], [], []

        def gen_id(age, pid, iy):
            key = (age, pid, iy)
            gid = gen_index.get(key)
            if gid is None:
                gid = len(g_age)
                gen_index[key] = gid
                g_age.append(age)
                g_pid.append(pid)
                g_iy.append(iy)
            return gid

        factor_index: dict = {}
        f_gid, f_w = [], []

        def factor_id(gid, w):
            key = (gid, w)
            fid = factor_index.get(key)
            if fid is None:
                fid = len(f_gid)
                factor_index[key] = fid
                f_gid.append(gid)
                f_w.append(w)
            return fid

        iv_factors: list[list[int]] = []

        def add_interval(h, t, pid, e_bias):
            fids = [factor_id(gen_id(a, pid, segment_iyears(a, e_bias)), w)
                    for a, w in age_segments(h, t)]
            iv_factors.append(fids)
            return len(iv_factors) - 1

        n_sub = len(subjects)
        n_visits = np.array([len(s.visits) for s in subjects], dtype=int)
        voffset = np.concatenate([[0], np.cumsum(n_visits)])
        self.n_sub = n_sub
        self.n_visits = n_visits
        self.cond_iv = np.full(n_sub, -1)
        visit_iv = {}
        dead, dead_iv, dead_gid = [], [], []

        for i, s in enumerate(subjects):
            pid = int(profile_ids[i])
            e = s.enrollment_age
            e_bias = e if bias_on else None
            if e > spec.baseline_age:
                self.cond_iv[i] = add_interval(spec.baseline_age,
                                               e - spec.baseline_age, pid, None)
            ages = [v.age for v in s.visits]
            for k in range(1, len(ages)):
                visit_iv[(i, k)] = add_interval(ages[k - 1], ages[k] - ages[k - 1],
                                                pid, e_bias)
            if s.died_at is not None:
                if self.death_idx is None:
                    raise LikelihoodError("death record in a model without a death state")
                dead.append(i)
                dead_iv.append(add_interval(ages[-1], s.died_at - ages[-1], pid, e_bias))
                a = math.floor(s.died_at)
                dead_gid.append(gen_id(a, pid, segment_iyears(a, e_bias)))

        self.g_age = np.array(g_age, dtype=float)
        self.g_pid = np.array(g_pid, dtype=int)
        self.g_iy = np.array(g_iy, dtype=int)
        self.f_gid = np.array(f_gid, dtype=int)
        self.f_w = np.array(f_w, dtype=float)

        lengths = np.array([len(f) for f in iv_factors], dtype=int)
        self.iv_len = lengths
        self.iv_off = np.concatenate([[0], np.cumsum(lengths)])
        self.iv_flat = np.array([f for fl in iv_factors for f in fl], dtype=int)

        # per-visit emissions, precomputed per channel
        self.total_visits = int(voffset[-1])
        self.channel_rows = []
        for ch in spec.emission_channels:
            rows, vals, fields = [], [], {}
            if ch.kind == "gaussian-regression":
                fields = {name: [] for name in ch.covariates}
            for i, s in enumerate(subjects):
                nt = effective_ntests(s)
                for k, visit in enumerate(s.visits):
                    if ch.name not in visit.responses:
                        continue
                    rows.append(voffset[i] + k)
                    vals.append(visit.responses[ch.name])
                    for name in fields:
                        if name == "age":
                            fields[name].append(visit.age)
                        elif name == "ntests":
                            fields[name].append(nt[k])
                        else:
                            fields[name].append(s.cov.get(name, 0.0))
            self.channel_rows.append((
                ch, np.array(rows, dtype=int), np.array(vals, dtype=float),
                {k: np.array(v, dtype=float) for k, v in fields.items()}))

        # forward-step gather arrays
        max_v = int(n_visits.max()) if n_sub else 0
        self.steps = []
        for k in range(max_v):
            subj = np.flatnonzero(n_visits > k)
            rows = voffset[subj] + k
            if k == 0:
                ivs = np.full(len(subj), -1)
            else:
                ivs = np.array([visit_iv[(i, k)] for i in subj], dtype=int)
            self.steps.append((subj, rows, ivs))

        self.dead = np.array(dead, dtype=int)
        self.dead_iv = np.array(dead_iv, dtype=int)
        self.dead_gid = np.array(dead_gid, dtype=int)

        self.support = np.zeros(ns, dtype=bool)
        for s in spec.enrollment_support:
            self.support[s - 1] = True

        rate_blocks = set()
        for rm in spec.rate_models:
            rate_blocks.add(rm.group)
        if spec.spline is not None:
            rate_blocks.add("spline")
        if spec.has_death_bias:
            rate_blocks.add("bias")
        idx = []
        for bn in rate_blocks:
            sl = layout.block(bn)
            idx.extend(range(sl.start, sl.stop))
        self._rate_slots = np.array(sorted(idx), dtype=int)
        idx = []
        for ch in spec.emission_channels:
            sl = layout.block(ch.block)
            idx.extend(range(sl.start, sl.stop))
        self._emis_slots = np.array(sorted(idx), dtype=int)
        self._rate_cache = (None, None)
        self._emis_cache = (None, None)

    # -- parameter-dependent pieces, cached on the relevant slots ------------

    def _factors(self, u, rate_table):
        key = u[self._rate_slots].tobytes()
        if self._rate_cache[0] == key:
            return self._rate_cache[1]
        Q = rate_table.generators(u, self.g_age, self.g_pid, self.g_iy)
        F = matrix_exponential(Q[self.f_gid] * self.f_w[:, None, None])
        np.maximum(F, 0.0, out=F)
        # left-to-right interval products
        n_iv = len(self.iv_len)
        P = F[self.iv_flat[self.iv_off[:-1]]].copy() if n_iv else np.zeros((0, 0, 0))
        for j in range(1, int(self.iv_len.max()) if n_iv else 0):
            act = np.flatnonzero(self.iv_len > j)
            P[act] = P[act] @ F[self.iv_flat[self.iv_off[act] + j]]
        death_rates = None
        if len(self.dead):
            death_rates = Q[self.dead_gid][:, :, self.death_idx].copy()
            death_rates[:, self.death_idx] = 0.0
        value = (P, death_rates)
        self._rate_cache = (key, value)
        return value

    def _emissions(self, u):
        key = u[self._emis_slots].tobytes()
        if self._emis_cache[0] == key:
            return self._emis_cache[1]
        E = np.ones((self.total_visits, self.spec.n_states))
        for ch, rows, vals, fields in self.channel_rows:
            if len(rows) == 0:
                continue
            E[rows] *= channel_factor_rows(self.spec, self.layout, u, ch,
                                           vals, fields)
        if self.death_idx is not None:
            E[:, self.death_idx] = 0.0
        self._emis_cache = (key, E)
        return E

    def evaluate(self, u, rate_table) -> np.ndarray:
        """Per-subject log-likelihoods for this block."""
        P, death_rates = self._factors(u, rate_table)
        E = self._emissions(u)
        n = self.n_sub
        pi0 = baseline_distribution(u, self.spec, self.layout)
        v = np.tile(pi0, (n, 1))
        logs = np.zeros(n)
        ok = np.ones(n, dtype=bool)

        has_cond = np.flatnonzero(self.cond_iv >= 0)
        if len(has_cond):
            v[has_cond] = np.einsum("ij,ijk->ik", v[has_cond],
                                    P[self.cond_iv[has_cond]])
            if self.options.enrollment_correction:
                v[np.ix_(has_cond, ~self.support)] = 0.0
                mass = v[has_cond].sum(axis=1)
                bad = mass <= 0.0
                if bad.any():
                    ok[has_cond[bad]] = False
                    mass[bad] = 1.0
                v[has_cond] /= mass[:, None]

        for k, (subj, rows, ivs) in enumerate(self.steps):
            if k > 0:
                v[subj] = np.einsum("ij,ijk->ik", v[subj], P[ivs])
            v[subj] *= E[rows]
            total = v[subj].sum(axis=1)
            bad = total <= 0.0
            if bad.any():
                ok[subj[bad]] = False
                total[bad] = 1.0
                v[subj[bad]] = 1.0
            with np.errstate(divide="ignore"):
                logs[subj] += np.log(total)
            v[subj] /= total[:, None]

        if len(self.dead):
            vd = np.einsum("ij,ijk->ik", v[self.dead], P[self.dead_iv])
            vd *= death_rates
            total = vd.sum(axis=1)
            bad = total <= 0.0
            if bad.any():
                ok[self.dead[bad]] = False
                total[bad] = 1.0
            logs[self.dead] += np.log(total)

        return np.where(ok, logs, -np.inf)


_FORK_REGISTRY: dict = {}
_next_eid = [0]


def _eval_chunk(eid, chunk_idx, u):
    ev = _FORK_REGISTRY[eid]
    return ev._plans[chunk_idx].evaluate(u, ev._rate_table)


class LikelihoodEvaluator:
    """Dataset compiled for repeated likelihood evaluation.

    With workers > 1 the subjects are split into contiguous blocks evaluated
    in forked worker processes; per-subject values are identical whatever the
    worker count, and the total is their ordered pairwise sum.
    """

    def __init__(self, spec: ModelSpec, layout: ParameterLayout, dataset,
                 options: LikelihoodOptions | None = None, workers: int = 1):
        if not dataset:
            raise LikelihoodError("empty dataset")
        self.spec = spec
        self.layout = layout
        self.options = options or LikelihoodOptions()
        self.workers = max(1, int(workers))
        for s in dataset:
            s.validate(spec)

        profiles = []
        prof_index: dict = {}
        profile_ids = np.zeros(len(dataset), dtype=int)
        for i, s in enumerate(dataset):
            key = tuple(float(s.cov.get(name, 0.0)) for name in spec.covariates)
            pid = prof_index.get(key)
            if pid is None:
                pid = len(profiles)
                prof_index[key] = pid
                profiles.append(key)
            profile_ids[i] = pid
        n_cov = len(spec.covariates)
        table = np.array(profiles, dtype=float).reshape(len(profiles), n_cov)
        self._rate_table = RateTable(spec, layout, table)

        n = len(dataset)
        n_chunks = min(self.workers, n)
        bounds = np.linspace(0, n, n_chunks + 1).astype(int)
        self._plans = [
            _Plan(spec, layout, dataset[lo:hi], self.options, profile_ids[lo:hi])
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        self.n_subjects = n
        self._pool = None
        self._eid = _next_eid[0]
        _next_eid[0] += 1

    def _ensure_pool(self):
        if self._pool is None and self.workers > 1 and len(self._plans) > 1:
            try:
                ctx = multiprocessing.get_context("fork")
                _FORK_REGISTRY[self._eid] = self
                self._pool = ProcessPoolExecutor(max_workers=self.workers,
                                                 mp_context=ctx)
            except (ValueError, OSError):
                self._pool = None
        return self._pool

    def per_subject(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        pool = self._ensure_pool()
        if pool is not None:
            futures = [pool.submit(_eval_chunk, self._eid, ci, u)
                       for ci in range(len(self._plans))]
            parts = [f.result() for f in futures]
        else:
            parts = [p.evaluate(u, self._rate_table) for p in self._plans]
        return np.concatenate(parts)

    def total(self, u: np.ndarray) -> float:
        return float(np.sum(self.per_subject(u)))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        _FORK_REGISTRY.pop(self._eid, None)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def total_log_likelihood(dataset, u: np.ndarray, spec: ModelSpec,
                         layout: ParameterLayout,
                         options: LikelihoodOptions | None = None,
                         workers: int = 1) -> float:
    """Ordered sum of subject log-likelihoods; deterministic in dataset order
    and invariant to the worker count."""
    with LikelihoodEvaluator(spec, layout, dataset, options, workers) as ev:
        return ev.total(np.asarray(u, dtype=float))

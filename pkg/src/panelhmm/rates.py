"""Transition-rate evaluation and generator-matrix assembly.

Log rates are linear in (centered) age and subject covariates; one transition
may instead carry a cubic age spline, and a shared group of transitions to
death carries the enrollment-decay offset g(iyears) = min(c + d*iyears, 0).
Rates are treated as constant between integer ages.
"""

from __future__ import annotations

import numpy as np

from .model import ModelSpec, ParameterLayout
from .splines import spline_eval, basis_matrix


class RateError(ValueError):
    pass


def death_bias_offset(c: float, d: float, iyears) -> float:
    """g(iyears): non-positive log-rate offset decaying linearly per year enrolled."""
    return np.minimum(c + d * np.asarray(iyears, dtype=float), 0.0)


def bias_years_to_zero(c: float, d: float) -> int:
    """Smallest integer year at which the offset has fully decayed."""
    if c >= 0:
        return 0
    if d <= 0:
        raise RateError("offset never decays when d <= 0")
    return int(np.ceil(-c / d))


def _covariate_values(spec: ModelSpec, cov: dict) -> np.ndarray:
    vals = []
    for name in spec.covariates:
        v = float(cov.get(name, 0.0))
        if not np.isfinite(v):
            raise RateError(f"covariate {name!r} is not finite")
        vals.append(v)
    return np.array(vals)


def log_rate(spec: ModelSpec, layout: ParameterLayout, u: np.ndarray,
             l: int, cov: dict, age: float, iyears=None) -> float:
    """Log transition rate for 1-based transition index l at integer age."""
    if not (1 <= l <= spec.n_transitions):
        raise RateError(f"unknown transition index {l}")
    rm = spec.rate_models[l - 1]
    sl = layout.block(rm.group)
    block = u[sl]
    if rm.kind == "spline-age":
        out = spline_eval(u[layout.block("spline")], float(age), spec.spline)
        coefs = block
    else:
        out = block[0] + block[1] * (float(age) - spec.age_center)
        coefs = block[2:]
    for beta, name in zip(coefs, rm.covariates):
        out += beta * float(cov.get(name, 0.0))
    if rm.kind == "shared-death" and iyears is not None:
        c, cd = u[layout.block("bias")]
        out += death_bias_offset(c, cd - c, int(iyears))
    return float(out)


def build_generator(spec: ModelSpec, layout: ParameterLayout, u: np.ndarray,
                    cov: dict, age: float, iyears=None) -> np.ndarray:
    """Generator matrix Q at one integer age: off-diagonal rates per the
    transition list, diagonals the negative row sums, absorbing rows zero."""
    ns = spec.n_states
    Q = np.zeros((ns, ns))
    for l, (a, b) in enumerate(spec.transitions, start=1):
        with np.errstate(over="ignore"):
            q = np.exp(log_rate(spec, layout, u, l, cov, age, iyears))
        if not np.isfinite(q):
            raise RateError(f"non-finite rate for transition {l} ({a}->{b})")
        Q[a - 1, b - 1] = q
    Q[np.arange(ns), np.arange(ns)] = -Q.sum(axis=1)
    return Q


class RateTable:
    """Vectorized generator builder over (integer age, profile, iyears) keys.

    profiles is an (n_profiles, n_covariates) array aligned with
    spec.covariates; iyears codes use -1 for "offset inactive".
    """

    def __init__(self, spec: ModelSpec, layout: ParameterLayout,
                 profiles: np.ndarray):
        self.spec = spec
        self.layout = layout
        self.profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        if not np.isfinite(self.profiles).all():
            raise RateError("non-finite covariate profile")
        ns = spec.n_states
        L = spec.n_transitions
        self.from_idx = np.array([a - 1 for a, _ in spec.transitions])
        self.to_idx = np.array([b - 1 for _, b in spec.transitions])
        self.b0_slot = np.full(L, -1)
        self.age_slot = np.full(L, -1)
        self.cov_slots = np.full((L, len(spec.covariates)), -1)
        self.is_spline = np.zeros(L, dtype=bool)
        self.is_biased = np.zeros(L, dtype=bool)
        for l, rm in enumerate(spec.rate_models):
            sl = layout.block(rm.group)
            if rm.kind == "spline-age":
                self.is_spline[l] = True
                cov_off = sl.start
            else:
                self.b0_slot[l] = sl.start
                self.age_slot[l] = sl.start + 1
                cov_off = sl.start + 2
            for j, name in enumerate(rm.covariates):
                self.cov_slots[l, spec.covariates.index(name)] = cov_off + j
            if rm.kind == "shared-death":
                self.is_biased[l] = True
        self.n_states = ns
        if spec.spline is not None:
            grid = np.arange(0, 201)
            self._basis_grid = basis_matrix(grid, spec.spline)
        else:
            self._basis_grid = None

    def log_rates(self, u: np.ndarray, ages, profile_ids, iyears_codes) -> np.ndarray:
        """(n_keys, n_transitions) log rates."""
        ages = np.asarray(ages, dtype=float)
        profile_ids = np.asarray(profile_ids, dtype=int)
        iyears_codes = np.asarray(iyears_codes, dtype=int)
        L = self.spec.n_transitions
        b0 = np.where(self.b0_slot >= 0, u[self.b0_slot], 0.0)
        bage = np.where(self.age_slot >= 0, u[self.age_slot], 0.0)
        beta = np.where(self.cov_slots >= 0, u[self.cov_slots], 0.0)   # (L, ncov)
        out = b0[None, :] + (ages - self.spec.age_center)[:, None] * bage[None, :]
        if self.profiles.size:
            out = out + (self.profiles @ beta.T)[profile_ids]
        if self.is_spline.any():
            c = u[self.layout.block("spline")]
            sval = self._basis_grid[ages.astype(int)] @ c
            out[:, self.is_spline] += sval[:, None]
        if self.spec.has_death_bias and self.is_biased.any():
            c, cd = u[self.layout.block("bias")]
            active = iyears_codes >= 0
            g = np.where(active,
                         np.minimum(c + (cd - c) * np.maximum(iyears_codes, 0), 0.0),
                         0.0)
            out[:, self.is_biased] += g[:, None]
        return out

    def generators(self, u: np.ndarray, ages, profile_ids, iyears_codes) -> np.ndarray:
        """(n_keys, n_states, n_states) generator matrices."""
        logq = self.log_rates(u, ages, profile_ids, iyears_codes)
        with np.errstate(over="ignore"):
            q = np.exp(logq)
        if not np.isfinite(q).all():
            l = int(np.argwhere(~np.isfinite(q))[0][1]) + 1
            raise RateError(f"non-finite rate for transition {l}")
        n = logq.shape[0]
        ns = self.n_states
        Q = np.zeros((n, ns, ns))
        Q[:, self.from_idx, self.to_idx] = q
        Q[:, np.arange(ns), np.arange(ns)] = -Q.sum(axis=2)
        return Q

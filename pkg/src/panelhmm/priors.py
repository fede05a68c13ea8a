"""Priors, parameter transforms, and biological ordering constraints.

Sampling happens on an unconstrained scale: log variances, logit
probabilities, and log-odds-vs-reference for the initial state block; all
rate coefficients are already unconstrained.  Independent Gaussian priors
live on that scale, truncated by the constraint set evaluated on the natural
scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (ModelSpec, ParameterLayout, T_EXP, T_EXPIT, T_IDENTITY,
                    T_SOFTMAX)
from .splines import basis_matrix

_LOG_2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def to_natural(u: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    """Unconstrained vector to natural scale (variances, probabilities)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != layout.size:
        raise ValueError(f"expected length {layout.size}, got {u.shape[-1]}")
    t = np.asarray(layout.transforms)
    nat = u.copy()
    exp_slots = t == T_EXP
    if exp_slots.any():
        nat[..., exp_slots] = np.exp(u[..., exp_slots])
    logit_slots = t == T_EXPIT
    if logit_slots.any():
        nat[..., logit_slots] = 1.0 / (1.0 + np.exp(-u[..., logit_slots]))
    sm = t == T_SOFTMAX
    if sm.any():
        w = np.exp(u[..., sm])
        nat[..., sm] = w / (1.0 + w.sum(axis=-1, keepdims=True))
    return nat


def from_natural(nat: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    """Inverse of to_natural; round trip is the identity to working precision."""
    nat = np.asarray(nat, dtype=float)
    if nat.shape[-1] != layout.size:
        raise ValueError(f"expected length {layout.size}, got {nat.shape[-1]}")
    t = np.asarray(layout.transforms)
    u = nat.copy()
    exp_slots = t == T_EXP
    if exp_slots.any():
        u[..., exp_slots] = np.log(nat[..., exp_slots])
    logit_slots = t == T_EXPIT
    if logit_slots.any():
        p = nat[..., logit_slots]
        u[..., logit_slots] = np.log(p) - np.log1p(-p)
    sm = t == T_SOFTMAX
    if sm.any():
        p = nat[..., sm]
        ref = 1.0 - p.sum(axis=-1, keepdims=True)
        u[..., sm] = np.log(p) - np.log(ref)
    return u


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass
class PriorSpec:
    """Independent Gaussians on the unconstrained scale, aligned to a layout."""

    names: tuple
    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.sd = np.asarray(self.sd, dtype=float)
        if (self.sd <= 0).any():
            raise ValueError("prior standard deviations must be positive")

    def log_density(self, u: np.ndarray) -> float:
        z = (u - self.mean) / self.sd
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(self.sd))
                     - 0.5 * len(self.mean) * _LOG_2PI)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        if size is None:
            return rng.normal(self.mean, self.sd)
        return rng.normal(self.mean, self.sd, size=(size, len(self.mean)))

    def replace(self, overrides: dict) -> "PriorSpec":
        """New PriorSpec with per-parameter (mean, sd) overrides by name."""
        mean = self.mean.copy()
        sd = self.sd.copy()
        for name, (m, s) in overrides.items():
            i = self.names.index(name)
            mean[i] = m
            sd[i] = s
        return PriorSpec(self.names, mean, sd)


_LOGVAR_BIOMARKER = 2.0 * np.log(0.4 / 3.0)

_MCSA_TRANSITION_ROWS = {
    # block name -> (b0, age, male, educ, apoe4) as (mean, sd) pairs
    "qndto7": ((-4.41, 0.1), (0.094, 0.01), (0.47, 0.05), (0.0, 0.1), (0.0, 1.0)),
    "q5to7": ((-4.0, 1.0), (0.1, 0.05), (0.0, 1.0), (0.0, 0.1), (0.0, 1.0)),
    "q6to7": ((-4.0, 1.0), (0.1, 0.05), (0.0, 1.0), (0.0, 0.1), (0.0, 1.0)),
    "default": ((-3.0, 1.0), (0.1, 0.05), (0.0, 1.0), (0.0, 0.1), (0.0, 1.0)),
}

_MCSA_SPLINE_ROW = ((-5.0, 1.0), (-4.0, 2.0), (-3.0, 2.0), (-2.0, 2.0),
                    (-1.0, 2.0), (0.0, 3.0), (1.0, 3.0), (2.0, 3.0))

_MCSA_FIXED = {
    "bias_c": (-0.75, 0.375),
    "bias_c_plus_d": (-0.60, 0.30),
    "pib_mu_aneg": (-1.3, 0.2),
    "pib_mu_apos": (-0.5, 0.2),
    "pib_logvar": (_LOGVAR_BIOMARKER, 2.0),
    "thick_mu_nneg": (3.14, 0.2),
    "thick_mu_npos": (2.34, 0.2),
    "thick_logvar": (_LOGVAR_BIOMARKER, 2.0),
    "mmse_a1": (-0.28, 0.75),
    "mmse_a2": (-0.28, 0.75),
    "mmse_a3": (-0.28, 0.75),
    "mmse_a4": (-0.28, 0.75),
    "mmse_a5": (-7.3, 3.0),
    "mmse_a6": (-7.3, 3.0),
    "mmse_a7": (0.0, 1.0),
    "mmse_a8": (0.0, 1.0),
    "mmse_a9": (0.0, 1.0),
    "mmse_a10": (0.0, 1.0),
    "mmse_a11": (0.0, 1.0),
    "mmse_logvar": (-0.7, 2.0),
    "diag_logit_p0": (-3.0, 1.0),
    "diag_logit_p1": (-3.0, 1.0),
    "init_xi1": (-3.5, 0.25),
    "init_xi2": (-6.0, 1.0),
    "init_xi3": (-6.0, 1.0),
}

_CAV_ROW = {"b0": (-2.5, 1.5), "age": (0.0, 0.25), "male": (0.0, 1.0)}


def default_priors(spec: ModelSpec, layout: ParameterLayout,
                   overrides: dict | None = None) -> PriorSpec:
    """Preset prior tables for mcsa7/cav4; a diffuse fallback elsewhere."""
    mean = np.zeros(layout.size)
    sd = np.full(layout.size, 2.0)
    transition_groups = {rm.group: rm for rm in spec.rate_models}
    for bn, off, ln in layout.blocks:
        names = layout.names[off:off + ln]
        if bn in transition_groups:
            rm = transition_groups[bn]
            if spec.name == "mcsa7":
                row = _MCSA_TRANSITION_ROWS.get(bn, _MCSA_TRANSITION_ROWS["default"])
                if rm.kind == "spline-age":
                    pairs = row[2:]          # the spline supplies b0 and age
                else:
                    pairs = row
                for j, (m, s) in enumerate(pairs[:ln]):
                    mean[off + j], sd[off + j] = m, s
            else:
                for j, nm in enumerate(names):
                    suffix = nm[len(bn) + 1:]
                    m, s = _CAV_ROW.get(suffix, (0.0, 1.0)) if spec.name == "cav4" \
                        else {"b0": (-3.0, 2.0), "age": (0.0, 0.5)}.get(suffix, (0.0, 1.0))
                    mean[off + j], sd[off + j] = m, s
        elif bn == "spline" and spec.name == "mcsa7":
            for j, (m, s) in enumerate(_MCSA_SPLINE_ROW[:ln]):
                mean[off + j], sd[off + j] = m, s
        elif spec.name == "cav4" and bn == "obs":
            for j in range(ln):
                mean[off + j], sd[off + j] = -2.5, 1.5
        else:
            for j, nm in enumerate(names):
                if nm in _MCSA_FIXED and spec.name == "mcsa7":
                    mean[off + j], sd[off + j] = _MCSA_FIXED[nm]
    return PriorSpec(layout.names, mean, sd).replace(overrides or {})


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

@dataclass
class Constraint:
    name: str
    fn: object       # (natural (n, p) array) -> (n,) bool


@dataclass
class ConstraintSet:
    constraints: list = field(default_factory=list)

    def names(self) -> list:
        return [c.name for c in self.constraints]

    def without(self, *names) -> "ConstraintSet":
        return ConstraintSet([c for c in self.constraints if c.name not in names])

    def satisfied_batch(self, nat: np.ndarray) -> np.ndarray:
        nat = np.atleast_2d(np.asarray(nat, dtype=float))
        ok = np.ones(nat.shape[0], dtype=bool)
        for c in self.constraints:
            alive = np.flatnonzero(ok)
            if len(alive) == 0:
                break
            ok[alive] &= c.fn(nat[alive])
        return ok

    def satisfied(self, nat: np.ndarray) -> bool:
        return bool(self.satisfied_batch(nat)[0]) if self.constraints else True

    def failures(self, nat: np.ndarray) -> list:
        nat = np.atleast_2d(np.asarray(nat, dtype=float))
        return [c.name for c in self.constraints if not c.fn(nat).all()]


def _slot(layout, name):
    return layout.index(name)


def default_constraints(spec: ModelSpec, layout: ParameterLayout,
                        disable: tuple = ()) -> ConstraintSet:
    """The mcsa7 ordering ledger; empty for other presets unless spelled out.

    Cheap, highly selective predicates come first so batch rejection
    sampling rarely reaches the spline comparison.
    """
    cs = ConstraintSet()
    if spec.name != "mcsa7":
        return cs

    a = [_slot(layout, f"mmse_a{j}") for j in range(1, 7)]

    def mmse_order(nat):
        # no constraint between states 2 and 3
        return ((nat[:, a[3]] >= nat[:, a[4]]) & (nat[:, a[4]] >= nat[:, a[5]])
                & (nat[:, a[0]] >= nat[:, a[1]]) & (nat[:, a[0]] >= nat[:, a[2]])
                & (nat[:, a[1]] >= nat[:, a[3]]) & (nat[:, a[2]] >= nat[:, a[3]]))

    cs.constraints.append(Constraint("mmse-ordering", mmse_order))

    age_slots = np.array([layout.index(f"{g}_age")
                          for g in dict.fromkeys(rm.group for rm in spec.rate_models
                                                 if rm.kind != "spline-age")])
    cs.constraints.append(Constraint(
        "age-coeffs-nonneg", lambda nat: (nat[:, age_slots] >= 0.0).all(axis=1)))

    c_sl, cd_sl = _slot(layout, "bias_c"), _slot(layout, "bias_c_plus_d")
    cs.constraints.append(Constraint(
        "bias-signs", lambda nat: (nat[:, c_sl] <= 0.0) & (nat[:, cd_sl] >= nat[:, c_sl])))

    nd0 = _slot(layout, "qndto7_b0")
    d57 = _slot(layout, "q5to7_b0")
    d67 = _slot(layout, "q6to7_b0")
    cs.constraints.append(Constraint(
        "dem-death-intercepts",
        lambda nat: (nat[:, d57] >= nat[:, nd0]) & (nat[:, d67] >= nat[:, nd0])))

    pa, pb = _slot(layout, "pib_mu_aneg"), _slot(layout, "pib_mu_apos")
    cs.constraints.append(Constraint(
        "pib-means", lambda nat: nat[:, pa] <= nat[:, pb]))
    ta, tb = _slot(layout, "thick_mu_nneg"), _slot(layout, "thick_mu_npos")
    cs.constraints.append(Constraint(
        "thick-means", lambda nat: nat[:, tb] <= nat[:, ta]))

    grid = np.arange(50, 121, dtype=float)
    rel = grid - spec.age_center

    def linear_pred(nat, group):
        b0 = nat[:, _slot(layout, f"{group}_b0")]
        b1 = nat[:, _slot(layout, f"{group}_age")]
        return b0[:, None] + b1[:, None] * rel[None, :]

    cs.constraints.append(Constraint(
        "rate-2to4-ge-1to3",
        lambda nat: (linear_pred(nat, "q2to4") >= linear_pred(nat, "q1to3")).all(axis=1)))

    basis = basis_matrix(grid, spec.spline)
    spline_sl = layout.block("spline")

    def cons_3to4(nat):
        sp = nat[:, spline_sl] @ basis.T
        return (linear_pred(nat, "q3to4") >= sp).all(axis=1)

    cs.constraints.append(Constraint("rate-3to4-ge-1to2", cons_3to4))

    return cs.without(*disable) if disable else cs


def log_prior(u: np.ndarray, priors: PriorSpec, constraints: ConstraintSet,
              layout: ParameterLayout) -> float:
    """Gaussian log-density on the unconstrained scale, truncated (unnormalized)
    to the constraint region on the natural scale."""
    u = np.asarray(u, dtype=float)
    if constraints.constraints and not constraints.satisfied(to_natural(u, layout)):
        return -np.inf
    return priors.log_density(u)

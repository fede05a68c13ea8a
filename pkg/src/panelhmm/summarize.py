"""Posterior summaries: per-parameter tables, convergence diagnostics, and
the study-level curves (enrollment death-rate decay, state-occupancy
evolution, reciprocal-rate tables, diagnosis misclassification)."""

from __future__ import annotations

import math

import numpy as np

from .expm import matrix_exponential
from .kernel import RateContext, interval_transition
from .model import ModelSpec, ParameterLayout
from .priors import to_natural
from .rates import build_generator


class SummaryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Chain diagnostics
# ---------------------------------------------------------------------------

def effective_sample_size(x: np.ndarray) -> float:
    """Initial-positive-sequence autocorrelation estimate of the ESS."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.ptp(x) == 0.0:
        return float(n)
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n].real
    acf /= acf[0]
    # sum consecutive lag pairs while their total stays positive
    tau = 1.0
    for k in range(1, n // 2):
        pair = acf[2 * k - 1] + acf[2 * k]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1.0))


def gelman_rubin(chains: list) -> float:
    """Potential scale reduction factor for one parameter across chains,
    truncated to the shortest chain."""
    n = min(len(c) for c in chains)
    arr = np.asarray([np.asarray(c, dtype=float)[:n] for c in chains])
    m = arr.shape[0]
    if m < 2 or n < 2:
        return float("nan")
    means = arr.mean(axis=1)
    W = arr.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    V = (n - 1) / n * W + (m + 1) / (m * n) * B
    if W <= 0.0:
        return 1.0
    return float(np.sqrt(V / W))


def posterior_summary(chain_draws: list, names) -> dict:
    """Column-by-column summary over one or more chains sharing a layout.

    Returns {name: {mean, sd, q2.5, q50, q97.5, rhat, ess}}; means are exact
    column means of the pooled retained draws.
    """
    if not chain_draws:
        raise SummaryError("no chains given")
    p = chain_draws[0].shape[1]
    for d in chain_draws:
        if d.shape[1] != p:
            raise SummaryError("chains disagree on the parameter layout")
    if len(names) != p:
        raise SummaryError("names do not match the draw matrix")
    pooled = np.vstack(chain_draws)
    out = {}
    for j, name in enumerate(names):
        col = pooled[:, j]
        qlo, q50, qhi = np.percentile(col, [2.5, 50.0, 97.5])
        out[name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if len(col) > 1 else 0.0,
            "q2.5": float(qlo), "q50": float(q50), "q97.5": float(qhi),
            "rhat": gelman_rubin([d[:, j] for d in chain_draws]),
            "ess": effective_sample_size(col),
        }
    return out


# ---------------------------------------------------------------------------
# Study-level curves
# ---------------------------------------------------------------------------

def death_bias_curve(draws: np.ndarray, layout: ParameterLayout,
                     max_years: int = 12) -> dict:
    """Posterior mean and 95% band of exp(g(iyears)): the fraction of the
    population death rate experienced per integer year enrolled."""
    c = draws[:, layout.index("bias_c")]
    cd = draws[:, layout.index("bias_c_plus_d")]
    d = cd - c
    years = np.arange(max_years + 1)
    g = np.minimum(c[:, None] + d[:, None] * years[None, :], 0.0)
    frac = np.exp(g)
    return {
        "iyears": years,
        "mean": frac.mean(axis=0),
        "q2.5": np.percentile(frac, 2.5, axis=0),
        "q97.5": np.percentile(frac, 97.5, axis=0),
    }


def _augmented_transition(spec, layout, u, cov, start_age, end_age):
    """Occupancy over an age span with the dementia state split by the state
    it was entered from, so the amyloid-first route is identifiable."""
    if spec.name != "mcsa7":
        raise SummaryError("route-resolved occupancy is defined for the mcsa7 preset")
    n = 8                                   # 1..5, dem-via-4, dem-via-5, dead
    P = np.eye(n)
    age = start_age
    while age < end_age:
        w = min(1.0, end_age - age)
        Q = build_generator(spec, layout, u, cov, int(math.floor(age)))
        Qa = np.zeros((n, n))
        Qa[:5, :5] = Q[:5, :5]
        Qa[:5, 7] = Q[:5, 6]
        Qa[3, 5] = Q[3, 5]                  # state 4 -> dementia (amyloid route)
        Qa[4, 6] = Q[4, 5]                  # state 5 -> dementia
        Qa[5, 7] = Q[5, 6]
        Qa[6, 7] = Q[5, 6]
        np.fill_diagonal(Qa, 0.0)
        np.fill_diagonal(Qa, -Qa.sum(axis=1))
        P = P @ matrix_exponential(w * Qa)
        age += w
    return P


def probability_evolution(spec: ModelSpec, layout: ParameterLayout,
                          u: np.ndarray, cov: dict,
                          ages=None) -> dict:
    """State-occupancy curves from the baseline state, conditional on being
    alive, plus the amyloid-route dementia curve."""
    if ages is None:
        ages = np.arange(int(spec.baseline_age), 111)
    ages = np.asarray(ages, dtype=float)
    base = spec.baseline_age
    death = spec.death_state - 1
    ctx = RateContext(spec, layout, u, cov, enrollment_age=None)
    rows = {f"state_{s}": [] for s in range(1, spec.n_states + 1) if s - 1 != death}
    alz = []
    for a in ages:
        P = interval_transition(base, float(a - base), ctx)
        alive = 1.0 - P[0, death]
        for s in range(1, spec.n_states + 1):
            if s - 1 == death:
                continue
            rows[f"state_{s}"].append(P[0, s - 1] / alive)
        if spec.name == "mcsa7":
            Pa = _augmented_transition(spec, layout, u, cov, base, float(a))
            alz.append(Pa[0, 5] / (1.0 - Pa[0, 7]))
    out = {"age": ages}
    out.update({k: np.array(v) for k, v in rows.items()})
    if alz:
        out["alzheimers_route"] = np.array(alz)
    return out


def reciprocal_rate_table(draws: np.ndarray, spec: ModelSpec,
                          layout: ParameterLayout, cov: dict, age: int) -> dict:
    """Posterior mean of 1/q_l per transition: expected years to the event at
    a fixed age and profile, averaged draw by draw (not 1/mean)."""
    from .rates import log_rate

    out = {}
    for l, (a, b) in enumerate(spec.transitions, start=1):
        vals = np.empty(draws.shape[0])
        for i in range(draws.shape[0]):
            vals[i] = math.exp(-log_rate(spec, layout, draws[i], l, cov, age))
        out[f"{a}->{b}"] = float(vals.mean())
    return out


def misclassification_table(draws: np.ndarray, layout: ParameterLayout) -> dict:
    """Diagnosis response table: each row holds the posterior mean of its two
    complementary probabilities with the 95% interval on the free one."""
    p0 = 1.0 / (1.0 + np.exp(-draws[:, layout.index("diag_logit_p0")]))
    p1 = 1.0 / (1.0 + np.exp(-draws[:, layout.index("diag_logit_p1")]))
    return {
        "not_demented": {
            "diagnosed_not_demented": float((1 - p0).mean()),
            "diagnosed_demented": float(p0.mean()),
            "q2.5": float(np.percentile(p0, 2.5)),
            "q97.5": float(np.percentile(p0, 97.5)),
        },
        "demented": {
            "diagnosed_not_demented": float(p1.mean()),
            "diagnosed_demented": float((1 - p1).mean()),
            "q2.5": float(np.percentile(p1, 2.5)),
            "q97.5": float(np.percentile(p1, 97.5)),
        },
    }

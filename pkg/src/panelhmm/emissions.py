"""Per-visit response densities conditional on the hidden state.

Channels are conditionally independent given the state, so a visit's emission
vector is the componentwise product of per-channel factors; missing channels
contribute a factor of one.  The death state emits nothing, so its component
is zero at any clinical visit.
"""

from __future__ import annotations

import numpy as np

from .model import (ModelSpec, ParameterLayout, GaussianPartition,
                    GaussianRegression, BernoulliPartition, CategoricalMisclass)
from .records import Visit

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class EmissionError(ValueError):
    pass


def _normal_pdf(x, mu, sigma):
    z = (x - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)


def transform_response(channel, value):
    """Raw observed value to model scale; log(PIB - 1) requires PIB > 1."""
    v = np.asarray(value, dtype=float)
    if channel.kind == "gaussian-partition" and channel.transform == "log-minus-1":
        if np.any(v <= 1.0):
            raise EmissionError(
                f"{channel.name} value <= 1 is incompatible with the log({channel.name}-1) transform")
        return np.log(v - 1.0)
    if channel.kind == "gaussian-regression":
        return v - channel.center
    return v


def expit(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def cav_misclass_matrix(p1, p2, p3, p4) -> np.ndarray:
    """Row-stochastic 4x4 misclassification response matrix; the death row is
    exact."""
    for p in (p1, p2, p3, p4):
        if not (0.0 <= p < 1.0):
            raise EmissionError("misclassification probabilities must lie in [0, 1)")
    if p2 + p3 >= 1.0:
        raise EmissionError("p2 + p3 must be < 1")
    return np.array([
        [1.0 - p1, p1, 0.0, 0.0],
        [p2, 1.0 - p2 - p3, p3, 0.0],
        [0.0, p4, 1.0 - p4, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def mmse_mean(state, fields, alpha, n_state_means=6):
    """Cognitive-score regression mean: state intercept plus covariate terms.

    fields supplies the covariate values in the channel's declared order
    (already centered where applicable).  Vectorized over rows when state and
    the field arrays are arrays.
    """
    state = np.asarray(state, dtype=int)
    if np.any((state < 1) | (state > n_state_means)):
        raise EmissionError("state outside the emitting range")
    alpha = np.asarray(alpha, dtype=float)
    mu = alpha[state - 1]
    for j, x in enumerate(fields):
        mu = mu + alpha[n_state_means + j] * np.asarray(x, dtype=float)
    return mu


def channel_factor_rows(spec: ModelSpec, layout: ParameterLayout, u: np.ndarray,
                        channel, values, fields: dict | None = None) -> np.ndarray:
    """Density of each observed value under every hidden state: (n_rows, n_states).

    fields carries per-row covariate arrays for regression channels ("age" is
    raw and centered here with the spec's rate centering).
    """
    ns = spec.n_states
    values = np.atleast_1d(np.asarray(values, dtype=float))
    m = values.shape[0]
    out = np.ones((m, ns))
    block = u[layout.block(channel.block)]

    if channel.kind == "gaussian-partition":
        y = transform_response(channel, values)
        sigma = np.sqrt(np.exp(block[2]))
        lo = _normal_pdf(y, block[0], sigma)
        hi = _normal_pdf(y, block[1], sigma)
        out[:] = 0.0
        for s in channel.group_lo:
            out[:, s - 1] = lo
        for s in channel.group_hi:
            out[:, s - 1] = hi

    elif channel.kind == "gaussian-regression":
        y = transform_response(channel, values)
        sigma = np.sqrt(np.exp(block[-1]))
        alpha = block[:-1]
        cols = []
        for name in channel.covariates:
            x = np.asarray(fields[name], dtype=float)
            if name == "age":
                x = x - spec.age_center
            cols.append(x)
        out[:] = 0.0
        for s in range(1, channel.n_state_means + 1):
            mu = mmse_mean(np.full(m, s), cols, alpha, channel.n_state_means)
            out[:, s - 1] = _normal_pdf(y, mu, sigma)

    elif channel.kind == "bernoulli-partition":
        p0, p1 = expit(block[0]), expit(block[1])
        yes = values >= 0.5
        pos = np.zeros(ns, dtype=bool)
        for s in channel.group_pos:
            pos[s - 1] = True
        live = np.ones(ns, dtype=bool)
        if spec.death_state is not None:
            live[spec.death_state - 1] = False
        neg = live & ~pos
        out[:, :] = 0.0
        out[:, pos] = np.where(yes, 1.0 - p1, p1)[:, None]
        out[:, neg] = np.where(yes, p0, 1.0 - p0)[:, None]

    elif channel.kind == "categorical-misclass":
        M = cav_misclass_matrix(*expit(block))
        obs = values.astype(int)
        if np.any((obs < 1) | (obs > ns)):
            raise EmissionError("observed state outside the state space")
        out = M[:, obs - 1].T.copy()

    else:
        raise EmissionError(f"unknown channel kind {channel.kind!r}")
    return out


def emission_vector(visit: Visit, cov: dict, u: np.ndarray, spec: ModelSpec,
                    layout: ParameterLayout, ntests: float | None = None) -> np.ndarray:
    """Emission factor per hidden state for one clinical (non-death) visit."""
    ns = spec.n_states
    e = np.ones(ns)
    for channel in spec.emission_channels:
        if channel.name not in visit.responses:
            continue
        fields = None
        if channel.kind == "gaussian-regression":
            fields = {name: [cov.get(name, 0.0)] for name in channel.covariates}
            fields["age"] = [visit.age]
            if "ntests" in channel.covariates:
                nt = ntests if ntests is not None else (visit.ntests or 0.0)
                fields["ntests"] = [nt]
        rows = channel_factor_rows(spec, layout, u, channel,
                                   [visit.responses[channel.name]], fields)
        e *= rows[0]
    if spec.death_state is not None:
        e[spec.death_state - 1] = 0.0
    return e

import numpy as np
import pytest

import panelhmm as ph
from panelhmm.emissions import (EmissionError, cav_misclass_matrix,
                                channel_factor_rows, emission_vector,
                                mmse_mean, expit)
from panelhmm.records import Visit

from conftest import strictly_feasible_center

REF_COV = {"male": 0.0, "educ": 0.0, "apoe4": 0.0}


@pytest.fixture()
def params(mcsa):
    _, layout, _, _ = mcsa
    return strictly_feasible_center(layout)


def test_all_missing_gives_ones_on_live_states(mcsa, params):
    spec, layout, _, _ = mcsa
    e = emission_vector(Visit(70.0, {}), REF_COV, params, spec, layout)
    assert np.array_equal(e[:6], np.ones(6))
    assert e[6] == 0.0


def test_diagnosis_channel_probabilities(mcsa, params):
    spec, layout, _, _ = mcsa
    p0 = expit(params[layout.index("diag_logit_p0")])
    p1 = expit(params[layout.index("diag_logit_p1")])
    e = emission_vector(Visit(70.0, {"dem": 1.0}), REF_COV, params, spec, layout)
    assert e[4] == pytest.approx(1.0 - p1)      # state 5, truly demented
    assert e[0] == pytest.approx(p0)            # state 1, false diagnosis
    e0 = emission_vector(Visit(70.0, {"dem": 0.0}), REF_COV, params, spec, layout)
    assert e0[4] == pytest.approx(p1)
    assert e0[0] == pytest.approx(1.0 - p0)


def test_pib_density_peak(mcsa, params):
    spec, layout, _, _ = mcsa
    u = params.copy()
    u[layout.index("pib_logvar")] = 2 * np.log(0.2)
    mu = u[layout.index("pib_mu_aneg")]
    pib = 1.0 + np.exp(mu)                      # log(pib - 1) lands on mu
    e = emission_vector(Visit(70.0, {"pib": pib}), REF_COV, u, spec, layout)
    peak = 1.0 / (0.2 * np.sqrt(2 * np.pi))
    assert peak == pytest.approx(1.9947, abs=1e-4)
    assert e[0] == pytest.approx(peak)
    gap = u[layout.index("pib_mu_apos")] - mu
    assert e[1] == pytest.approx(peak * np.exp(-gap ** 2 / (2 * 0.04)))


def test_pib_partition_sharing(mcsa, params):
    spec, layout, _, _ = mcsa
    e = emission_vector(Visit(70.0, {"pib": 1.35}), REF_COV, params, spec, layout)
    assert e[0] == e[2] == e[4]                 # states 1, 3, 5 share A-
    assert e[1] == e[3] == e[5]                 # states 2, 4, 6 share A+
    t = emission_vector(Visit(70.0, {"thickness": 2.7}), REF_COV, params, spec, layout)
    assert t[0] == t[1]
    assert t[2] == t[3] == t[4] == t[5]


def test_pib_at_or_below_one_rejected(mcsa, params):
    spec, layout, _, _ = mcsa
    with pytest.raises(EmissionError):
        emission_vector(Visit(70.0, {"pib": 0.8}), REF_COV, params, spec, layout)


def test_channel_independence(mcsa, params):
    spec, layout, _, _ = mcsa
    both = emission_vector(Visit(70.0, {"pib": 1.4, "thickness": 2.5}),
                           REF_COV, params, spec, layout)
    a = emission_vector(Visit(70.0, {"pib": 1.4}), REF_COV, params, spec, layout)
    b = emission_vector(Visit(70.0, {"thickness": 2.5}), REF_COV, params, spec, layout)
    assert np.allclose(both[:6], (a * b)[:6], rtol=1e-15)


def test_mmse_mean_indicator_selection():
    alpha = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -0.5, 0.3, 0.2, -0.1, 0.2])
    for j in range(1, 7):
        assert mmse_mean(j, [0.0] * 5, alpha) == pytest.approx(alpha[j - 1])
    # ntests is the last covariate; three prior tests add 3 * 0.2
    assert mmse_mean(2, [0.0, 0.0, 0.0, 0.0, 3.0], alpha) == pytest.approx(2.0 + 0.6)


def test_mmse_monotone_means(mcsa, params):
    spec, layout, _, _ = mcsa
    sl = layout.block("mmse")
    alpha = params[sl][:-1]
    means = [mmse_mean(j, [0.0] * 5, alpha) for j in (4, 5, 6)]
    assert means[0] >= means[1] >= means[2]


def test_mmse_state_seven_rejected():
    with pytest.raises(EmissionError):
        mmse_mean(7, [0.0] * 5, np.zeros(11))


def test_cav_matrix_layout():
    M = cav_misclass_matrix(0.0, 0.0, 0.0, 0.0)
    assert np.array_equal(M, np.eye(4))
    M = cav_misclass_matrix(0.02, 0.1, 0.05, 0.12)
    assert np.allclose(M[1], [0.1, 0.85, 0.05, 0.0])
    assert np.array_equal(M[3], [0.0, 0.0, 0.0, 1.0])
    assert np.allclose(M.sum(axis=1), 1.0)


def test_cav_matrix_rejects_incoherent_probs():
    with pytest.raises(EmissionError):
        cav_misclass_matrix(0.1, 0.6, 0.4, 0.1)
    with pytest.raises(EmissionError):
        cav_misclass_matrix(-0.1, 0.1, 0.1, 0.1)


def test_cav_channel_factor(cav):
    spec, layout, _, _ = cav
    u = np.zeros(layout.size)
    u[layout.block("obs")] = np.array([-3.0, -2.0, -2.5, -1.8])
    ch = spec.emission_channels[0]
    rows = channel_factor_rows(spec, layout, u, ch, [2.0])
    M = cav_misclass_matrix(*expit(u[layout.block("obs")]))
    assert np.allclose(rows[0], M[:, 1])


def test_everything_finite_and_nonnegative(mcsa, params):
    spec, layout, _, _ = mcsa
    rng = np.random.default_rng(0)
    for _ in range(50):
        responses = {}
        if rng.random() < 0.5:
            responses["pib"] = float(rng.uniform(1.01, 3.0))
        if rng.random() < 0.5:
            responses["thickness"] = float(rng.uniform(1.5, 4.0))
        if rng.random() < 0.5:
            responses["mmse"] = float(rng.uniform(0, 30))
        if rng.random() < 0.5:
            responses["dem"] = float(rng.integers(2))
        cov = {"male": float(rng.integers(2)), "educ": float(rng.integers(2)),
               "apoe4": float(rng.integers(2))}
        e = emission_vector(Visit(float(rng.uniform(50, 100)), responses),
                            cov, params, spec, layout, ntests=float(rng.integers(5)))
        assert np.isfinite(e).all() and (e >= 0).all()

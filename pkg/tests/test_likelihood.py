import numpy as np
import pytest

import panelhmm as ph
from panelhmm.likelihood import (LikelihoodError, LikelihoodEvaluator,
                                 LikelihoodOptions, baseline_distribution,
                                 initial_distribution, subject_log_likelihood,
                                 total_log_likelihood)
from panelhmm.model import parameter_layout
from panelhmm.records import SubjectRecord, Visit

from conftest import feasible_params, strictly_feasible_center, toy3_spec
from oracles import enumerate_log_likelihood, mp_forward_log_likelihood

REF_COV = {"male": 0.0, "educ": 0.0, "apoe4": 0.0}


def random_subject(rng, spec, sid, max_visits=4, allow_death=True,
                   delayed=True) -> SubjectRecord:
    cov = {"male": float(rng.integers(2)), "educ": float(rng.integers(2)),
           "apoe4": float(rng.integers(2))}
    e = 50.0 if (not delayed or rng.random() < 0.3) else float(rng.uniform(50.1, 80))
    n = int(rng.integers(1, max_visits + 1))
    ages = np.sort(e + np.concatenate([[0.0], rng.uniform(0.4, 3.0, size=n - 1).cumsum()]))
    visits = []
    for a in ages:
        responses = {}
        if rng.random() < 0.4:
            responses["pib"] = float(rng.uniform(1.05, 2.5))
        if rng.random() < 0.4:
            responses["thickness"] = float(rng.uniform(1.8, 3.8))
        if rng.random() < 0.6:
            responses["mmse"] = float(rng.uniform(15, 30))
        if rng.random() < 0.8:
            responses["dem"] = float(rng.random() < 0.1)
        visits.append(Visit(float(a), responses))
    died = None
    if allow_death and rng.random() < 0.3:
        died = float(ages[-1] + rng.uniform(0.1, 2.0))
    return SubjectRecord(sid, cov, visits, died_at=died)


# -- initial distribution ----------------------------------------------------

def test_symmetric_softmax(mcsa):
    spec, layout, _, _ = mcsa
    u = np.zeros(layout.size)
    pi = baseline_distribution(u, spec, layout)
    assert np.allclose(pi, [0.25, 0.25, 0.25, 0.25, 0, 0, 0])


def test_baseline_distribution_example(mcsa):
    spec, layout, _, _ = mcsa
    u = np.zeros(layout.size)
    xi = np.array([-3.5, -6.0, -6.0])
    u[layout.block("init")] = xi
    # independent softmax with state 1 as the reference category
    w = np.concatenate([[1.0], np.exp(xi)])
    expected = w / w.sum()
    pi = baseline_distribution(u, spec, layout)
    assert np.allclose(pi[:4], expected, atol=1e-12)
    assert np.allclose(pi, [0.9660, 0.0292, 0.0024, 0.0024, 0, 0, 0], atol=5e-5)
    assert pi.sum() == pytest.approx(1.0)


def test_enrollment_at_baseline_returns_pi0(mcsa):
    spec, layout, priors, constraints = mcsa
    u = feasible_params(np.random.default_rng(0), layout, priors, constraints)
    subj = SubjectRecord("s", REF_COV, [Visit(50.0, {})])
    pi = initial_distribution(subj, u, spec, layout)
    assert np.array_equal(pi, baseline_distribution(u, spec, layout))


def test_delayed_enrollment_support_and_mass(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(1)
    for _ in range(10):
        u = feasible_params(rng, layout, priors, constraints)
        subj = SubjectRecord("s", REF_COV, [Visit(float(rng.uniform(55, 88)), {})])
        pi = initial_distribution(subj, u, spec, layout)
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(pi[4:] == 0.0)
        assert (pi >= 0).all()


def test_numerically_dead_conditioning_raises(mcsa):
    spec, layout, priors, _ = mcsa
    u = priors.mean.copy()
    u[layout.index("qndto7_b0")] = 25.0          # absurd death rate
    subj = SubjectRecord("s", REF_COV, [Visit(80.0, {})])
    with pytest.raises(LikelihoodError):
        initial_distribution(subj, u, spec, layout)
    assert subject_log_likelihood(subj, u, spec, layout) == -np.inf


# -- single-subject likelihood ----------------------------------------------

def test_all_missing_single_visit_is_zero(mcsa):
    spec, layout, priors, constraints = mcsa
    u = feasible_params(np.random.default_rng(2), layout, priors, constraints)
    subj = SubjectRecord("s", REF_COV, [Visit(50.0, {})])
    # pi0 components sum to 1 up to one rounding of the softmax normalization
    assert subject_log_likelihood(subj, u, spec, layout) == pytest.approx(0.0, abs=1e-15)


def test_forward_matches_enumeration(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(3)
    for i in range(25):
        u = feasible_params(rng, layout, priors, constraints)
        subj = random_subject(rng, spec, f"s{i}")
        got = subject_log_likelihood(subj, u, spec, layout)
        want = enumerate_log_likelihood(subj, u, spec, layout)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


def test_death_terminated_subject_matches_enumeration(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(4)
    u = feasible_params(rng, layout, priors, constraints)
    subj = SubjectRecord(
        "dead", {"male": 1.0, "educ": 0.0, "apoe4": 1.0},
        [Visit(61.3, {"pib": 1.6, "dem": 0.0}),
         Visit(62.8, {"mmse": 24.0, "dem": 0.0}),
         Visit(64.1, {"thickness": 2.2, "dem": 1.0})],
        died_at=66.45)
    got = subject_log_likelihood(subj, u, spec, layout)
    want = enumerate_log_likelihood(subj, u, spec, layout)
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want))
    # the death factor is a density and may legitimately exceed probability 1
    assert np.isfinite(got)


def test_uncorrected_option_matches_enumeration_and_is_lower(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(5)
    u = feasible_params(rng, layout, priors, constraints)
    subj = SubjectRecord("s", REF_COV,
                         [Visit(72.0, {"dem": 0.0}), Visit(74.0, {"dem": 0.0})])
    off = LikelihoodOptions(enrollment_correction=False)
    got = subject_log_likelihood(subj, u, spec, layout, off)
    want = enumerate_log_likelihood(subj, u, spec, layout, off)
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want))
    corrected = subject_log_likelihood(subj, u, spec, layout)
    assert got < corrected


def test_correction_is_noop_at_baseline(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(6)
    u = feasible_params(rng, layout, priors, constraints)
    subj = random_subject(rng, spec, "s", delayed=False)
    on = subject_log_likelihood(subj, u, spec, layout)
    off = subject_log_likelihood(subj, u, spec, layout,
                                 LikelihoodOptions(enrollment_correction=False))
    assert on == off


def test_deleting_all_missing_interior_visit_is_harmless(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(7)
    u = feasible_params(rng, layout, priors, constraints)
    with_gap = SubjectRecord("s", REF_COV, [
        Visit(60.0, {"pib": 1.4, "dem": 0.0}),
        Visit(61.25, {}),
        Visit(63.0, {"mmse": 26.0, "dem": 0.0}),
    ])
    without = SubjectRecord("s", REF_COV, [
        Visit(60.0, {"pib": 1.4, "dem": 0.0}),
        Visit(63.0, {"mmse": 26.0, "dem": 0.0}),
    ])
    a = subject_log_likelihood(with_gap, u, spec, layout)
    b = subject_log_likelihood(without, u, spec, layout)
    assert abs(a - b) < 1e-9


# -- dataset-level -----------------------------------------------------------

def test_total_equals_subject_for_singleton(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(8)
    u = feasible_params(rng, layout, priors, constraints)
    subj = random_subject(rng, spec, "s")
    total = total_log_likelihood([subj], u, spec, layout)
    solo = subject_log_likelihood(subj, u, spec, layout)
    assert total == pytest.approx(solo, rel=1e-12)


def test_duplicated_subject_doubles_the_total(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(9)
    u = feasible_params(rng, layout, priors, constraints)
    subj = random_subject(rng, spec, "s")
    one = total_log_likelihood([subj], u, spec, layout)
    two = total_log_likelihood([subj, subj], u, spec, layout)
    assert two == pytest.approx(2 * one, rel=1e-12)


def test_evaluator_matches_reference(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(10)
    dataset = [random_subject(rng, spec, f"s{i}") for i in range(30)]
    for trial in range(3):
        u = feasible_params(rng, layout, priors, constraints)
        with LikelihoodEvaluator(spec, layout, dataset) as ev:
            fast = ev.per_subject(u)
        slow = np.array([subject_log_likelihood(s, u, spec, layout)
                         for s in dataset])
        assert np.allclose(fast, slow, rtol=1e-10, atol=1e-12)


def test_evaluator_matches_reference_with_options(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(11)
    dataset = [random_subject(rng, spec, f"s{i}") for i in range(15)]
    u = feasible_params(rng, layout, priors, constraints)
    for opts in (LikelihoodOptions(enrollment_correction=False),
                 LikelihoodOptions(death_bias=False),
                 LikelihoodOptions(False, False)):
        with LikelihoodEvaluator(spec, layout, dataset, opts) as ev:
            fast = ev.per_subject(u)
        slow = np.array([subject_log_likelihood(s, u, spec, layout, opts)
                         for s in dataset])
        assert np.allclose(fast, slow, rtol=1e-10, atol=1e-12)


def test_worker_counts_agree_bitwise(mcsa):
    spec, layout, priors, constraints = mcsa
    rng = np.random.default_rng(12)
    dataset = [random_subject(rng, spec, f"s{i}") for i in range(23)]
    u = feasible_params(rng, layout, priors, constraints)
    values = [total_log_likelihood(dataset, u, spec, layout, workers=w)
              for w in (1, 4, 8)]
    assert values[0] == values[1] == values[2]


# -- scaling stability on a long record --------------------------------------

def test_thirty_visit_subject_matches_extended_precision():
    spec = toy3_spec()
    layout = parameter_layout(spec)
    u = np.zeros(layout.size)
    u[layout.index("q1to2_b0")] = -1.2
    u[layout.index("q1to3_b0")] = -2.5
    u[layout.index("q2to3_b0")] = -1.8
    u[layout.index("marker_mu_lo")] = 0.0
    u[layout.index("marker_mu_hi")] = 1.0
    u[layout.index("marker_logvar")] = 2 * np.log(0.05)
    u[layout.index("init_xi1")] = -2.0
    rng = np.random.default_rng(13)
    # responses ~15 sigma out: per-visit factors near 1e-49 stay representable
    # but their product over 30 visits would underflow any double
    visits = [Visit(0.5 * k + 0.25, {"marker": float(1.7 + 0.1 * rng.random())})
              for k in range(30)]
    subj = SubjectRecord("long", {}, visits)
    got = subject_log_likelihood(subj, u, spec, layout)
    want = mp_forward_log_likelihood(subj, u, spec, layout)
    assert np.isfinite(got)
    assert got < -709.0        # would underflow without per-step rescaling
    assert abs(got - want) <= 1e-9 * abs(want)
    with LikelihoodEvaluator(spec, layout, [subj]) as ev:
        assert ev.total(u) == pytest.approx(got, rel=1e-12)

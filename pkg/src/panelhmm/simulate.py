"""Truth-known cohort simulation: exact path sampling under annually-varying
rates, enrollment rules with survivor filtering, visit schedules, and response
emission from the true model.

Every subject draws from a dedicated generator seeded by (seed, subject
index), so datasets are reproducible and independent of how generation is
scheduled.  Subjects dead (or otherwise outside the enrollment support) at
their drawn enrollment age are discarded, which is exactly the selection
effect the enrollment conditioning in the likelihood corrects for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .emissions import cav_misclass_matrix, expit, mmse_mean
from .kernel import segment_iyears
from .likelihood import baseline_distribution
from .model import ModelSpec, ParameterLayout, build_model_spec, parameter_layout
from .rates import build_generator
from .records import SubjectRecord, Visit


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    spec: ModelSpec
    true_params: np.ndarray
    cohort_size: int
    enrollment: dict
    visit_schedule: dict
    followup_years: float
    seed: int = 0
    baseline_probs: Optional[np.ndarray] = None     # None: derive from true_params
    biomarker_availability: Optional[dict] = None   # {"subject_prob", "table"}
    mmse_prob: float = 0.0
    covariate_model: dict = field(default_factory=dict)

    def __post_init__(self):
        self.true_params = np.asarray(self.true_params, dtype=float)
        if self.followup_years <= 0:
            raise ScenarioError("follow-up horizon must be positive")
        if self.biomarker_availability is not None:
            table = np.asarray(self.biomarker_availability["table"], dtype=float)
            if table.shape != (2, 2) or abs(table.sum() - 1.0) > 1e-9 or (table < 0).any():
                raise ScenarioError("availability table must be a 2x2 distribution")
        if self.enrollment.get("kind") not in ("at-baseline", "delayed", "age-profile"):
            raise ScenarioError(f"unknown enrollment rule {self.enrollment!r}")
        if self.visit_schedule.get("kind") not in ("fixed-interval", "empirical-resample"):
            raise ScenarioError(f"unknown visit schedule {self.visit_schedule!r}")


@dataclass
class TruthRecord:
    subject_id: str
    path: list                    # (state, entry_age) pairs, times increasing


def state_at(path, t: float) -> int:
    s = path[0][0]
    for state, entry in path:
        if entry <= t:
            s = state
        else:
            break
    return s


def sample_path(spec: ModelSpec, layout: ParameterLayout, u: np.ndarray,
                cov: dict, start_state: int, start_age: float,
                horizon_age: float, rng: np.random.Generator,
                enrollment_age: Optional[float] = None,
                qcache: Optional[dict] = None) -> list:
    """Exact continuous-time path from start_age to horizon_age (or absorption).

    Rates change at integer ages, and the enrollment-decay offset switches on
    at enrollment_age; both boundaries are handled by memoryless resampling of
    the holding time within each constant-rate stretch.
    """
    if horizon_age <= start_age:
        raise ScenarioError("horizon must exceed the starting age")
    qcache = {} if qcache is None else qcache
    outgoing = {a: [] for a in range(1, spec.n_states + 1)}
    for l, (a, b) in enumerate(spec.transitions, start=1):
        outgoing[a].append((l, b))

    path = [(start_state, start_age)]
    s, tau = start_state, start_age
    while tau < horizon_age:
        if not outgoing[s]:
            break
        a = math.floor(tau)
        biased = enrollment_age is not None and tau >= enrollment_age
        iy = segment_iyears(a, enrollment_age) if biased else -1
        boundaries = [float(a + 1), horizon_age]
        if enrollment_age is not None and tau < enrollment_age:
            boundaries.append(enrollment_age)
        chunk_end = min(b for b in boundaries if b > tau)
        key = (a, iy)
        Q = qcache.get(key)
        if Q is None:
            Q = build_generator(spec, layout, u, cov, a, iy if iy >= 0 else None)
            qcache[key] = Q
        lam = -Q[s - 1, s - 1]
        if lam <= 0.0:
            tau = chunk_end
            continue
        wait = rng.exponential(1.0 / lam)
        if tau + wait >= chunk_end:
            tau = chunk_end
            continue
        tau += wait
        dests = [b for _, b in outgoing[s]]
        rates = np.array([Q[s - 1, b - 1] for b in dests])
        s = int(rng.choice(dests, p=rates / rates.sum()))
        path.append((s, tau))
    return path


def _draw_enrollment(rule: dict, baseline_age: float, rng) -> float:
    kind = rule["kind"]
    if kind == "at-baseline":
        return baseline_age
    if kind == "delayed":
        p = rule.get("prob_delayed", 0.75)
        if p <= 0.0:
            return baseline_age          # degenerate rule, same stream as at-baseline
        if rng.random() >= p:
            return baseline_age
        years = rng.normal(rule.get("mean_years", 5.0), rule.get("sd_years", 1.0))
        return baseline_age + max(1, round(years))
    ages = np.asarray(rule["ages"], dtype=float)
    weights = np.asarray(rule.get("weights", np.ones(len(ages))), dtype=float)
    e = float(rng.choice(ages, p=weights / weights.sum()))
    if rule.get("jitter", True):
        e += rng.random()
    return e


def _visit_times(schedule: dict, start: float, stop: float, rng) -> list:
    times = [start]
    t = start
    while True:
        if schedule["kind"] == "fixed-interval":
            gap = schedule.get("gap", 1.0)
        else:
            pool = schedule["pool"]
            gap = float(pool[rng.integers(len(pool))])
        t += gap
        if t > stop:
            return times
        times.append(t)


def _death_time(spec: ModelSpec, path) -> Optional[float]:
    if spec.death_state is None:
        return None
    for state, entry in path:
        if state == spec.death_state:
            return entry
    return None


def simulate_cohort(scenario: Scenario):
    """Generate (subjects, truths).  The realized cohort is at most
    cohort_size because candidates outside the enrollment support at their
    enrollment age never make it into the study."""
    spec = scenario.spec
    layout = parameter_layout(spec)
    u = scenario.true_params
    if scenario.baseline_probs is None:
        pi0 = baseline_distribution(u, spec, layout)
    else:
        pi0 = np.asarray(scenario.baseline_probs, dtype=float)
    if abs(pi0.sum() - 1.0) > 1e-9:
        raise ScenarioError("baseline state distribution must sum to one")
    support = set(spec.enrollment_support)
    states = np.arange(1, spec.n_states + 1)

    gaussian_channels = {ch.name: ch for ch in spec.emission_channels
                         if ch.kind == "gaussian-partition"}
    regression = next((ch for ch in spec.emission_channels
                       if ch.kind == "gaussian-regression"), None)
    bernoulli = next((ch for ch in spec.emission_channels
                      if ch.kind == "bernoulli-partition"), None)
    categorical = next((ch for ch in spec.emission_channels
                        if ch.kind == "categorical-misclass"), None)
    M = None
    if categorical is not None:
        M = cav_misclass_matrix(*expit(u[layout.block(categorical.block)]))

    subjects, truths = [], []
    for i in range(scenario.cohort_size):
        rng = np.random.default_rng(np.random.SeedSequence((scenario.seed, i)))
        cov = {}
        for name in spec.covariates:
            model = scenario.covariate_model.get(name, {"kind": "bernoulli", "p": 0.5})
            if model["kind"] == "bernoulli":
                cov[name] = float(rng.random() < model["p"])
            else:
                cov[name] = float(rng.choice(model["values"]))
        start_state = int(rng.choice(states, p=pi0))
        e = _draw_enrollment(scenario.enrollment, spec.baseline_age, rng)
        horizon = e + scenario.followup_years
        path = sample_path(spec, layout, u, cov, start_state,
                           spec.baseline_age, horizon, rng,
                           enrollment_age=e, qcache={})
        if state_at(path, e) not in support:
            continue

        death = _death_time(spec, path)
        times = _visit_times(scenario.visit_schedule, e, horizon, rng)
        if death is not None:
            times = [t for t in times if t < death]
        if not times:
            continue

        eligible = (scenario.biomarker_availability is not None
                    and rng.random() < scenario.biomarker_availability["subject_prob"])
        table = (np.asarray(scenario.biomarker_availability["table"], dtype=float)
                 if eligible else None)

        visits = []
        ntests = 0
        for t in times:
            s_t = state_at(path, t)
            responses = {}
            if table is not None:
                cell = rng.choice(4, p=table.ravel())
                measure_pib = cell in (0, 2)
                measure_thick = cell in (0, 1)
            else:
                measure_pib = measure_thick = False
            for name, ch in gaussian_channels.items():
                if name == "pib":
                    measured = measure_pib
                elif name == "thickness":
                    measured = measure_thick
                else:
                    measured = True        # channels outside the scan protocol
                if not measured or s_t == spec.death_state:
                    continue
                sl = layout.block(ch.block)
                if s_t in ch.group_lo:
                    mu = u[sl.start]
                elif s_t in ch.group_hi:
                    mu = u[sl.start + 1]
                else:
                    continue               # state outside the emitting partition
                sigma = math.sqrt(math.exp(u[sl.stop - 1]))
                y = rng.normal(mu, sigma)
                responses[name] = 1.0 + math.exp(y) if ch.transform == "log-minus-1" else y
            if regression is not None and s_t <= regression.n_state_means \
                    and rng.random() < scenario.mmse_prob:
                sl = layout.block(regression.block)
                alpha = u[sl][:-1]
                sigma = math.sqrt(math.exp(u[sl.stop - 1]))
                fields = []
                for name in regression.covariates:
                    if name == "age":
                        fields.append(t - spec.age_center)
                    elif name == "ntests":
                        fields.append(float(ntests))
                    else:
                        fields.append(cov.get(name, 0.0))
                mu = mmse_mean(s_t, fields, alpha, regression.n_state_means)
                responses[regression.name] = regression.center + mu + rng.normal(0.0, sigma)
            if bernoulli is not None and s_t != spec.death_state:
                sl = layout.block(bernoulli.block)
                p0, p1 = expit(u[sl])
                p_yes = (1.0 - p1) if s_t in bernoulli.group_pos else p0
                responses[bernoulli.name] = float(rng.random() < p_yes)
            if categorical is not None and s_t != spec.death_state:
                responses[categorical.name] = float(rng.choice(
                    np.arange(1, spec.n_states + 1), p=M[s_t - 1]))
            visits.append(Visit(float(t), responses,
                                ntests=float(ntests) if regression is not None else None))
            if regression is not None and regression.name in responses:
                ntests += 1

        died_at = death if (death is not None and death <= horizon) else None
        subjects.append(SubjectRecord(f"{scenario.name}-{i:05d}", cov, visits,
                                      died_at=died_at))
        truths.append(TruthRecord(subjects[-1].id, path))
    return subjects, truths


# ---------------------------------------------------------------------------
# Bundled scenario presets
# ---------------------------------------------------------------------------

# Stand-in generating values for the CAV-style study: magnitudes typical of
# msm fits to heart-transplant panel data, constrained only by plausibility.
CAV_TRUE = {
    "q1to2_b0": -2.35, "q1to2_age": 0.06, "q1to2_male": -0.10,
    "q1to4_b0": -3.90, "q1to4_age": 0.08, "q1to4_male": 0.25,
    "q2to3_b0": -1.40, "q2to3_age": 0.05, "q2to3_male": 0.00,
    "q2to4_b0": -3.00, "q2to4_age": 0.05, "q2to4_male": 0.20,
    "q3to4_b0": -1.90, "q3to4_age": 0.02, "q3to4_male": 0.00,
    "obs_logit_p1": -3.48, "obs_logit_p2": -1.59,
    "obs_logit_p3": -2.75, "obs_logit_p4": -1.32,
}

# Generating values for the synthetic aging cohort; rate intercepts and the
# enrollment-decay pair sit in the bulk of their priors, response parameters
# match the prior table's centers.
MCSA_TRUE = {
    "q1to2_male": 0.10, "q1to2_educ": -0.10, "q1to2_apoe4": 0.80,
    "q1to3_b0": -3.00, "q1to3_age": 0.10, "q1to3_male": 0.20,
    "q1to3_educ": -0.15, "q1to3_apoe4": 0.10,
    "qndto7_b0": -4.41, "qndto7_age": 0.094, "qndto7_male": 0.47,
    "qndto7_educ": 0.00, "qndto7_apoe4": 0.00,
    "q2to4_b0": -2.60, "q2to4_age": 0.10, "q2to4_male": 0.10,
    "q2to4_educ": -0.10, "q2to4_apoe4": 0.20,
    "q3to4_b0": -2.80, "q3to4_age": 0.10, "q3to4_male": 0.00,
    "q3to4_educ": 0.00, "q3to4_apoe4": 0.80,
    "q3to5_b0": -3.30, "q3to5_age": 0.10, "q3to5_male": 0.10,
    "q3to5_educ": -0.20, "q3to5_apoe4": 0.00,
    "q4to6_b0": -2.50, "q4to6_age": 0.11, "q4to6_male": -0.10,
    "q4to6_educ": -0.10, "q4to6_apoe4": 0.40,
    "q5to6_b0": -2.80, "q5to6_age": 0.10, "q5to6_male": 0.00,
    "q5to6_educ": 0.00, "q5to6_apoe4": 0.30,
    "q5to7_b0": -3.60, "q5to7_age": 0.094, "q5to7_male": 0.40,
    "q5to7_educ": 0.00, "q5to7_apoe4": 0.00,
    "q6to7_b0": -3.30, "q6to7_age": 0.094, "q6to7_male": 0.40,
    "q6to7_educ": 0.00, "q6to7_apoe4": 0.00,
    "spline_c1": -5.20, "spline_c2": -4.60, "spline_c3": -4.20,
    "spline_c4": -3.90, "spline_c5": -3.70, "spline_c6": -3.60,
    "spline_c7": -3.50, "spline_c8": -3.50,
    "bias_c": -1.171, "bias_c_plus_d": -1.051,
    "pib_mu_aneg": -1.30, "pib_mu_apos": -0.50,
    "pib_logvar": 2 * math.log(0.4 / 3),
    "thick_mu_nneg": 3.14, "thick_mu_npos": 2.34,
    "thick_logvar": 2 * math.log(0.4 / 3),
    "mmse_a1": 0.50, "mmse_a2": -0.20, "mmse_a3": -0.30, "mmse_a4": -1.00,
    "mmse_a5": -6.50, "mmse_a6": -8.00,
    "mmse_a7": -0.02, "mmse_a8": 0.20, "mmse_a9": 0.30, "mmse_a10": -0.10,
    "mmse_a11": 0.15, "mmse_logvar": 0.50,
    "diag_logit_p0": -4.80, "diag_logit_p1": -2.10,
    "init_xi1": -3.50, "init_xi2": -6.00, "init_xi3": -6.00,
}

# Inter-visit gaps (years) for the aging cohort, median near 15 months with a
# right tail of missed visits.
MCSA_GAP_POOL = (1.00, 1.10, 1.15, 1.20, 1.25, 1.25, 1.30, 1.30, 1.40, 1.50,
                 1.70, 2.00, 2.50, 3.00, 3.60, 4.40, 5.20)

MCSA_BIOMARKER_TABLE = ((0.227, 0.231), (0.002, 0.540))

MCSA_ENROLLMENT_AGES = tuple(range(50, 90))
# exponential taper keeps the cohort young enough for a realistic death share
MCSA_ENROLLMENT_WEIGHTS = tuple(math.exp(-0.45 * (a - 50)) for a in range(50, 90))


def params_from_names(layout: ParameterLayout, values: dict) -> np.ndarray:
    u = np.zeros(layout.size)
    for name, val in values.items():
        u[layout.index(name)] = val
    return u


def scenario_presets(name: str, cohort_size: Optional[int] = None,
                     seed: int = 0, **overrides) -> Scenario:
    if name in ("cav-baseline", "cav-delayed"):
        spec = build_model_spec("cav4")
        layout = parameter_layout(spec)
        enrollment = ({"kind": "at-baseline"} if name == "cav-baseline"
                      else {"kind": "delayed", "prob_delayed": 0.75,
                            "mean_years": 5.0, "sd_years": 1.0})
        base = Scenario(
            name=name, spec=spec,
            true_params=params_from_names(layout, CAV_TRUE),
            cohort_size=cohort_size or 2000,
            enrollment=enrollment,
            visit_schedule={"kind": "fixed-interval", "gap": 1.0},
            followup_years=15.0,
            seed=seed,
            baseline_probs=np.array([0.95, 0.04, 0.01, 0.0]),
            covariate_model={"male": {"kind": "bernoulli", "p": 0.8}},
        )
    elif name == "mcsa-synthetic":
        spec = build_model_spec("mcsa7")
        layout = parameter_layout(spec)
        base = Scenario(
            name=name, spec=spec,
            true_params=params_from_names(layout, MCSA_TRUE),
            cohort_size=cohort_size or 4742,
            enrollment={"kind": "age-profile", "ages": MCSA_ENROLLMENT_AGES,
                        "weights": MCSA_ENROLLMENT_WEIGHTS, "jitter": True},
            visit_schedule={"kind": "empirical-resample", "pool": MCSA_GAP_POOL},
            followup_years=12.0,
            seed=seed,
            biomarker_availability={"subject_prob": 0.57,
                                    "table": MCSA_BIOMARKER_TABLE},
            mmse_prob=0.97,
            covariate_model={"male": {"kind": "bernoulli", "p": 0.5},
                             "educ": {"kind": "bernoulli", "p": 0.4},
                             "apoe4": {"kind": "bernoulli", "p": 0.25}},
        )
    else:
        raise ScenarioError(f"unknown scenario preset {name!r}")
    for key, val in overrides.items():
        if not hasattr(base, key):
            raise ScenarioError(f"unknown scenario field {key!r}")
        setattr(base, key, val)
    return base

import numpy as np
import pytest

import panelhmm as ph
from panelhmm.model import GaussianPartition, ModelSpec, RateModel


def toy3_spec():
    """Two live states plus exactly-observed death, one Gaussian marker."""
    return ModelSpec(
        name="toy3", states=("lo", "hi", "gone"),
        transitions=((1, 2), (1, 3), (2, 3)),
        rate_models=(RateModel("loglinear", "q1to2"),
                     RateModel("loglinear", "q1to3"),
                     RateModel("loglinear", "q2to3")),
        emission_channels=(GaussianPartition(
            name="marker", block="marker", group_lo=(1,), group_hi=(2,),
            mu_names=("mu_lo", "mu_hi")),),
        baseline_age=0.0, age_center=0.0, enrollment_support=(1, 2),
        death_state=3)


@pytest.fixture(scope="session")
def mcsa():
    spec = ph.build_model_spec("mcsa7")
    layout = ph.parameter_layout(spec)
    priors = ph.default_priors(spec, layout)
    constraints = ph.default_constraints(spec, layout)
    return spec, layout, priors, constraints


@pytest.fixture(scope="session")
def cav():
    spec = ph.build_model_spec("cav4")
    layout = ph.parameter_layout(spec)
    priors = ph.default_priors(spec, layout)
    constraints = ph.default_constraints(spec, layout)
    return spec, layout, priors, constraints


def strictly_feasible_center(layout) -> np.ndarray:
    """A strictly constraint-feasible mcsa7 vector to randomize around."""
    u = np.zeros(layout.size)
    values = {
        "q1to2_male": 0.1, "q1to2_educ": 0.0, "q1to2_apoe4": 0.6,
        "q1to3_b0": -3.0, "q1to3_age": 0.10,
        "qndto7_b0": -4.41, "qndto7_age": 0.094, "qndto7_male": 0.47,
        "q2to4_b0": -2.6, "q2to4_age": 0.10,
        "q3to4_b0": -2.8, "q3to4_age": 0.10, "q3to4_apoe4": 0.6,
        "q3to5_b0": -3.3, "q3to5_age": 0.10,
        "q4to6_b0": -2.5, "q4to6_age": 0.11,
        "q5to6_b0": -2.8, "q5to6_age": 0.10,
        "q5to7_b0": -3.6, "q5to7_age": 0.094,
        "q6to7_b0": -3.3, "q6to7_age": 0.094,
        "spline_c1": -5.2, "spline_c2": -4.6, "spline_c3": -4.2,
        "spline_c4": -3.9, "spline_c5": -3.7, "spline_c6": -3.6,
        "spline_c7": -3.5, "spline_c8": -3.5,
        "bias_c": -1.171, "bias_c_plus_d": -0.95,
        "pib_mu_aneg": -1.3, "pib_mu_apos": -0.5,
        "pib_logvar": 2 * np.log(0.4 / 3),
        "thick_mu_nneg": 3.14, "thick_mu_npos": 2.34,
        "thick_logvar": 2 * np.log(0.4 / 3),
        "mmse_a1": 0.5, "mmse_a2": -0.2, "mmse_a3": -0.3, "mmse_a4": -1.0,
        "mmse_a5": -6.5, "mmse_a6": -8.0,
        "mmse_a7": -0.02, "mmse_a8": 0.2, "mmse_a9": 0.3, "mmse_a10": -0.1,
        "mmse_a11": 0.15, "mmse_logvar": 0.5,
        "diag_logit_p0": -4.8, "diag_logit_p1": -2.1,
        "init_xi1": -3.5, "init_xi2": -6.0, "init_xi3": -6.0,
    }
    for name, val in values.items():
        u[layout.index(name)] = val
    return u


def feasible_params(rng, layout, priors, constraints, scale=0.3, max_tries=400):
    """Random mcsa7 parameters near the feasible center, rejection-checked.

    Perturbations are scaled by the prior sds so tightly-identified slots
    (age slopes) move little and the constraint rejection rate stays low.
    """
    center = strictly_feasible_center(layout)
    for _ in range(max_tries):
        u = center + scale * priors.sd * rng.standard_normal(layout.size)
        if constraints.satisfied(ph.to_natural(u, layout)):
            return u
    raise RuntimeError("could not draw feasible parameters")

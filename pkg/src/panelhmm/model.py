"""Model definitions: state spaces, rate models, emission bindings, parameter layout.

States and transitions are 1-based in specs and serialized files (matching the
usual multi-state notation); numerical code converts to 0-based indices at the
array boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np


class ModelSpecError(ValueError):
    """Raised for structurally invalid model descriptions."""


# ---------------------------------------------------------------------------
# Rate models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateModel:
    """How one transition's log rate is built.

    kind:
      "loglinear"    b0 + b_age*(age - center) + sum_j b_j * cov_j
      "spline-age"   cubic spline in age replaces b0 + b_age; covariates add on
      "shared-death" loglinear, one coefficient block shared by a group of
                     transitions, plus the enrollment-decay offset g(iyears)
    group names the coefficient block; transitions with the same group share it.
    """

    kind: str
    group: str
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("loglinear", "spline-age", "shared-death"):
            raise ModelSpecError(f"unknown rate model kind {self.kind!r}")


@dataclass(frozen=True)
class SplineConfig:
    """Clamped cubic B-spline on age; boundary knots repeated to multiplicity 4."""

    interior_knots: tuple[float, ...] = (55.0, 65.0, 75.0, 90.0)
    boundary: tuple[float, float] = (50.0, 120.0)
    degree: int = 3

    @property
    def n_coefficients(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary
        k = self.degree + 1
        return np.array([lo] * k + list(self.interior_knots) + [hi] * k)


# ---------------------------------------------------------------------------
# Emission channels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPartition:
    """Two-mean Gaussian response: one mean per state group, shared variance."""

    name: str
    block: str
    group_lo: tuple[int, ...]          # states emitting the first mean
    group_hi: tuple[int, ...]          # states emitting the second mean
    mu_names: tuple[str, str]
    transform: str = "identity"        # "identity" | "log-minus-1"
    kind: str = field(default="gaussian-partition", init=False)

    def param_names(self) -> list[str]:
        return [f"{self.block}_{self.mu_names[0]}",
                f"{self.block}_{self.mu_names[1]}",
                f"{self.block}_logvar"]


@dataclass(frozen=True)
class GaussianRegression:
    """Per-state mean plus linear covariate terms (MMSE-style), shared variance."""

    name: str
    block: str
    n_state_means: int
    covariates: tuple[str, ...]        # appended to the state-mean terms, in order
    center: float = 0.0                # subtracted from the raw response
    kind: str = field(default="gaussian-regression", init=False)

    def param_names(self) -> list[str]:
        n = self.n_state_means + len(self.covariates)
        return [f"{self.block}_a{j + 1}" for j in range(n)] + [f"{self.block}_logvar"]


@dataclass(frozen=True)
class BernoulliPartition:
    """Binary response with a false-positive and false-negative probability.

    States in group_pos truly carry the condition: they emit 1 with
    probability 1 - p1 (p1 = missed diagnosis).  Other live states emit 1
    with probability p0 (false diagnosis).
    """

    name: str
    block: str
    group_pos: tuple[int, ...]
    kind: str = field(default="bernoulli-partition", init=False)

    def param_names(self) -> list[str]:
        return [f"{self.block}_logit_p0", f"{self.block}_logit_p1"]


@dataclass(frozen=True)
class CategoricalMisclass:
    """Observed-state response with adjacent-state misclassification (4 states).

    Row-stochastic response matrix, with rows indexed by the true state:
        1:  (1-p1,      p1,         0,    0)
        2:  (p2,        1-p2-p3,    p3,   0)
        3:  (0,         p4,         1-p4, 0)
        4:  (0,         0,          0,    1)
    """

    name: str
    block: str
    kind: str = field(default="categorical-misclass", init=False)

    def param_names(self) -> list[str]:
        return [f"{self.block}_logit_p{j + 1}" for j in range(4)]


EMISSION_KINDS = {
    "gaussian-partition": GaussianPartition,
    "gaussian-regression": GaussianRegression,
    "bernoulli-partition": BernoulliPartition,
    "categorical-misclass": CategoricalMisclass,
}


# ---------------------------------------------------------------------------
# ModelSpec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a progression model.

    transitions are (from_state, to_state) pairs, 1-based, in rate index
    order; rate_models aligns with them.  initial_fixed, when given, pins the
    baseline state distribution (over all states) instead of estimating it.
    """

    name: str
    states: tuple[str, ...]
    transitions: tuple[tuple[int, int], ...]
    rate_models: tuple[RateModel, ...]
    emission_channels: tuple
    baseline_age: float
    age_center: float
    enrollment_support: tuple[int, ...]
    death_state: Optional[int] = None
    spline: Optional[SplineConfig] = None
    initial_fixed: Optional[tuple[float, ...]] = None
    has_death_bias: bool = False
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        self._validate()

    # -- structure ----------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return len(self.transitions)

    def transition_index(self, frm: int, to: int) -> int:
        """1-based rate index l for the (from, to) pair."""
        return self.transitions.index((frm, to)) + 1

    def shared_death_transitions(self) -> list[int]:
        """1-based indices of transitions carrying the enrollment-decay offset."""
        return [l + 1 for l, rm in enumerate(self.rate_models)
                if rm.kind == "shared-death"]

    def _validate(self):
        ns = self.n_states
        if ns < 2:
            raise ModelSpecError("need at least two states")
        seen = set()
        for (a, b) in self.transitions:
            if not (1 <= a <= ns and 1 <= b <= ns):
                raise ModelSpecError(f"transition ({a},{b}) references unknown state")
            if a == b:
                raise ModelSpecError(f"self-transition ({a},{b}) not allowed")
            if (a, b) in seen:
                raise ModelSpecError(f"duplicate transition ({a},{b})")
            seen.add((a, b))
        if self.death_state is not None:
            if not (1 <= self.death_state <= ns):
                raise ModelSpecError("death_state out of range")
            for (a, b) in self.transitions:
                if a == self.death_state:
                    raise ModelSpecError(
                        f"outgoing transition from absorbing death state ({a},{b})")
            if self.death_state in self.enrollment_support:
                raise ModelSpecError("death state cannot be enrollable")
        for s in self.enrollment_support:
            if not (1 <= s <= ns):
                raise ModelSpecError("enrollment_support references unknown state")
        if len(self.rate_models) != len(self.transitions):
            raise ModelSpecError("rate_models must align with transitions")
        if any(rm.kind == "spline-age" for rm in self.rate_models) and self.spline is None:
            raise ModelSpecError("spline-age rate model requires a SplineConfig")
        if self.initial_fixed is not None:
            pi = np.asarray(self.initial_fixed, dtype=float)
            if pi.shape != (ns,) or abs(pi.sum() - 1.0) > 1e-9 or (pi < 0).any():
                raise ModelSpecError("initial_fixed must be a distribution over states")
            for j in range(ns):
                if (j + 1) not in self.enrollment_support and pi[j] != 0.0:
                    raise ModelSpecError("initial_fixed puts mass outside enrollment support")
        groups = {}
        for rm in self.rate_models:
            groups.setdefault(rm.group, rm)
            if groups[rm.group] != rm:
                raise ModelSpecError(f"group {rm.group!r} bound to conflicting rate models")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "states": list(self.states),
            "transitions": [list(t) for t in self.transitions],
            "rate_models": [asdict(rm) for rm in self.rate_models],
            "emission_channels": [asdict(ch) for ch in self.emission_channels],
            "baseline_age": self.baseline_age,
            "age_center": self.age_center,
            "enrollment_support": list(self.enrollment_support),
            "death_state": self.death_state,
            "spline": asdict(self.spline) if self.spline else None,
            "initial_fixed": list(self.initial_fixed) if self.initial_fixed else None,
            "has_death_bias": self.has_death_bias,
            "covariates": list(self.covariates),
        }
        return d

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        channels = []
        for ch in d["emission_channels"]:
            ch = dict(ch)
            kind = ch.pop("kind")
            cls = EMISSION_KINDS.get(kind)
            if cls is None:
                raise ModelSpecError(f"unknown emission channel kind {kind!r}")
            for key in ("group_lo", "group_hi", "group_pos", "mu_names", "covariates"):
                if key in ch and ch[key] is not None:
                    ch[key] = tuple(ch[key])
            channels.append(cls(**ch))
        spline = None
        if d.get("spline"):
            sp = dict(d["spline"])
            sp["interior_knots"] = tuple(sp["interior_knots"])
            sp["boundary"] = tuple(sp["boundary"])
            spline = SplineConfig(**sp)
        return ModelSpec(
            name=d["name"],
            states=tuple(d["states"]),
            transitions=tuple((int(a), int(b)) for a, b in d["transitions"]),
            rate_models=tuple(
                RateModel(kind=rm["kind"], group=rm["group"],
                          covariates=tuple(rm.get("covariates", ())))
                for rm in d["rate_models"]),
            emission_channels=tuple(channels),
            baseline_age=float(d["baseline_age"]),
            age_center=float(d["age_center"]),
            enrollment_support=tuple(int(s) for s in d["enrollment_support"]),
            death_state=d.get("death_state"),
            spline=spline,
            initial_fixed=tuple(d["initial_fixed"]) if d.get("initial_fixed") else None,
            has_death_bias=bool(d.get("has_death_bias", False)),
            covariates=tuple(d.get("covariates", ())),
        )

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        return ModelSpec.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

# slot transforms between the unconstrained (sampling) scale and the natural scale
T_IDENTITY = 0
T_EXP = 1        # log-variance -> variance
T_EXPIT = 2      # logit probability -> probability
T_SOFTMAX = 3    # initial-state xi block, handled jointly


@dataclass(frozen=True)
class ParameterLayout:
    """Canonical flat ordering of all free parameters for a spec."""

    names: tuple[str, ...]
    blocks: tuple[tuple[str, int, int], ...]      # (block name, offset, length)
    transforms: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.names)

    def block(self, name: str) -> slice:
        for bn, off, ln in self.blocks:
            if bn == name:
                return slice(off, off + ln)
        raise KeyError(f"no block named {name!r}")

    def has_block(self, name: str) -> bool:
        return any(bn == name for bn, _, _ in self.blocks)

    def block_names(self) -> list[str]:
        return [bn for bn, _, _ in self.blocks]

    def index(self, name: str) -> int:
        return self.names.index(name)


def parameter_layout(spec: ModelSpec) -> ParameterLayout:
    """Build the deterministic layout: transition blocks in transition order,
    then spline, bias pair, emission blocks in channel order, initial block."""
    names: list[str] = []
    blocks: list[tuple[str, int, int]] = []
    transforms: list[int] = []

    def add_block(bname, bnames, tcodes):
        blocks.append((bname, len(names), len(bnames)))
        names.extend(bnames)
        transforms.extend(tcodes)

    seen = set()
    for rm in spec.rate_models:
        if rm.group in seen:
            continue
        seen.add(rm.group)
        if rm.kind == "spline-age":
            slots = [f"{rm.group}_{c}" for c in rm.covariates]
        else:
            slots = [f"{rm.group}_b0", f"{rm.group}_age"]
            slots += [f"{rm.group}_{c}" for c in rm.covariates]
        add_block(rm.group, slots, [T_IDENTITY] * len(slots))

    if spec.spline is not None:
        n = spec.spline.n_coefficients
        add_block("spline", [f"spline_c{j + 1}" for j in range(n)], [T_IDENTITY] * n)

    if spec.has_death_bias:
        add_block("bias", ["bias_c", "bias_c_plus_d"], [T_IDENTITY, T_IDENTITY])

    for ch in spec.emission_channels:
        pnames = ch.param_names()
        if ch.kind in ("gaussian-partition", "gaussian-regression"):
            tcodes = [T_IDENTITY] * (len(pnames) - 1) + [T_EXP]
        else:
            tcodes = [T_EXPIT] * len(pnames)
        add_block(ch.block, pnames, tcodes)

    if spec.initial_fixed is None:
        k = len(spec.enrollment_support) - 1
        add_block("init", [f"init_xi{j + 1}" for j in range(k)], [T_SOFTMAX] * k)

    return ParameterLayout(tuple(names), tuple(blocks), tuple(transforms))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

MCSA_STATES = ("A-N-", "A+N-", "A-N+", "A+N+", "A-Dem", "A+Dem", "Dead")

MCSA_TRANSITIONS = (
    (1, 2), (1, 3), (1, 7), (2, 4), (2, 7), (3, 4), (3, 5),
    (3, 7), (4, 6), (4, 7), (5, 6), (5, 7), (6, 7),
)

CAV_STATES = ("no CAV", "mild", "severe", "death")

CAV_TRANSITIONS = ((1, 2), (1, 4), (2, 3), (2, 4), (3, 4))


def _mcsa7_spec() -> ModelSpec:
    covs = ("male", "educ", "apoe4")
    death_group = RateModel("shared-death", "qndto7", covs)
    rate_models = []
    for (a, b) in MCSA_TRANSITIONS:
        if (a, b) == (1, 2):
            rate_models.append(RateModel("spline-age", "q1to2", covs))
        elif b == 7 and a in (1, 2, 3, 4):
            rate_models.append(death_group)
        else:
            rate_models.append(RateModel("loglinear", f"q{a}to{b}", covs))
    channels = (
        GaussianPartition(name="pib", block="pib",
                          group_lo=(1, 3, 5), group_hi=(2, 4, 6),
                          mu_names=("mu_aneg", "mu_apos"),
                          transform="log-minus-1"),
        GaussianPartition(name="thickness", block="thick",
                          group_lo=(1, 2), group_hi=(3, 4, 5, 6),
                          mu_names=("mu_nneg", "mu_npos")),
        GaussianRegression(name="mmse", block="mmse", n_state_means=6,
                           covariates=("age", "male", "educ", "apoe4", "ntests"),
                           center=28.0),
        BernoulliPartition(name="dem", block="diag", group_pos=(5, 6)),
    )
    return ModelSpec(
        name="mcsa7",
        states=MCSA_STATES,
        transitions=MCSA_TRANSITIONS,
        rate_models=tuple(rate_models),
        emission_channels=channels,
        baseline_age=50.0,
        age_center=50.0,
        enrollment_support=(1, 2, 3, 4),
        death_state=7,
        spline=SplineConfig(),
        has_death_bias=True,
        covariates=("male", "educ", "apoe4"),
    )


def _cav4_spec() -> ModelSpec:
    # time axis is years since transplant; "age" coefficient multiplies that
    rate_models = tuple(
        RateModel("loglinear", f"q{a}to{b}", ("male",)) for (a, b) in CAV_TRANSITIONS
    )
    channels = (CategoricalMisclass(name="observed_state", block="obs"),)
    return ModelSpec(
        name="cav4",
        states=CAV_STATES,
        transitions=CAV_TRANSITIONS,
        rate_models=rate_models,
        emission_channels=channels,
        baseline_age=0.0,
        age_center=0.0,
        enrollment_support=(1, 2, 3),
        death_state=4,
        initial_fixed=(0.95, 0.04, 0.01, 0.0),
        covariates=("male",),
    )


_PRESETS = {"mcsa7": _mcsa7_spec, "cav4": _cav4_spec}


def build_model_spec(config) -> ModelSpec:
    """Resolve a spec from a preset name, a dict, or a JSON file path."""
    if isinstance(config, ModelSpec):
        return config
    if isinstance(config, str):
        if config in _PRESETS:
            return _PRESETS[config]()
        with open(config) as fh:
            return ModelSpec.from_json(fh.read())
    if isinstance(config, dict):
        return ModelSpec.from_dict(config)
    raise ModelSpecError(f"cannot build a model spec from {type(config).__name__}")


def preset_names() -> list[str]:
    return sorted(_PRESETS)

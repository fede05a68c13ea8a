"""Subject-level data containers shared by the likelihood, simulator and IO."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ModelSpec


class RecordError(ValueError):
    """Raised for structurally invalid subject data."""


@dataclass
class Visit:
    """One clinical visit: age plus whichever responses were observed.

    responses maps channel name to the raw observed value; missing channels
    are simply absent.  ntests, when None, is derived from the visit history.
    """

    age: float
    responses: dict = field(default_factory=dict)
    ntests: Optional[float] = None


@dataclass
class SubjectRecord:
    """One subject: covariates, ordered visits, optional exact death age."""

    id: str
    cov: dict
    visits: list
    died_at: Optional[float] = None

    @property
    def enrollment_age(self) -> float:
        return self.visits[0].age

    def validate(self, spec: ModelSpec):
        if not self.visits:
            raise RecordError(f"subject {self.id}: no visits")
        ages = [v.age for v in self.visits]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise RecordError(f"subject {self.id}: visit ages not strictly increasing")
        if self.died_at is not None and self.died_at <= ages[-1]:
            raise RecordError(f"subject {self.id}: death not after last visit")
        if ages[0] < spec.baseline_age:
            raise RecordError(
                f"subject {self.id}: enrollment age {ages[0]} before baseline")
        for v in self.visits:
            for name, val in v.responses.items():
                if not np.isfinite(val):
                    raise RecordError(f"subject {self.id}: non-finite {name} response")


def effective_ntests(subject: SubjectRecord) -> list[float]:
    """Per-visit count of prior MMSE administrations, honoring explicit values."""
    out = []
    taken = 0
    for v in subject.visits:
        out.append(float(v.ntests) if v.ntests is not None else float(taken))
        if "mmse" in v.responses:
            taken += 1
    return out

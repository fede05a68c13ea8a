"""Interval transition probabilities under annually-varying rates.

Over an interval [h, h+t] the generator is constant between integer ages, so
the transition matrix is a left-partial / full-year / right-partial product of
matrix exponentials.  The enrollment-decay offset, when active, is keyed to
the integer age of each segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expm import matrix_exponential
from .model import ModelSpec, ParameterLayout
from .rates import build_generator


def age_segments(h: float, t: float) -> list[tuple[int, float]]:
    """Split [h, h+t] at integer ages: ordered (integer age, duration) pairs.

    Zero-duration end pieces are dropped; t == 0 yields a single zero-length
    segment so the caller gets the identity.
    """
    if t < 0:
        raise ValueError("negative duration")
    end = h + t
    a0 = math.floor(h)
    a1 = math.floor(end)
    if a0 == a1:
        return [(a0, t)]
    segs = [(a0, a0 + 1.0 - h)]
    segs += [(a, 1.0) for a in range(a0 + 1, a1)]
    if end > a1:
        segs.append((a1, end - a1))
    return segs


def segment_iyears(age: int, enrollment_age: Optional[float]) -> int:
    """Offset code for a segment at an integer age: -1 when inactive, else
    whole years enrolled at the moment that age is reached (floored at 0)."""
    if enrollment_age is None:
        return -1
    return max(0, math.floor(age - enrollment_age))


@dataclass
class RateContext:
    """Everything needed to evaluate Q along an interval for one subject.

    enrollment_age None means the enrollment-decay offset is inactive over the
    whole interval (population rates); the likelihood uses that for the
    baseline-to-enrollment stretch.
    """

    spec: ModelSpec
    layout: ParameterLayout
    u: np.ndarray
    cov: dict
    enrollment_age: Optional[float] = None
    use_cache: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def generator(self, age: int) -> np.ndarray:
        iy = segment_iyears(age, self.enrollment_age)
        key = ("Q", age, iy)
        if self.use_cache and key in self._cache:
            return self._cache[key]
        Q = build_generator(self.spec, self.layout, self.u, self.cov, age,
                            iy if iy >= 0 else None)
        if self.use_cache:
            self._cache[key] = Q
        return Q

    def year_factor(self, age: int, weight: float) -> np.ndarray:
        iy = segment_iyears(age, self.enrollment_age)
        key = ("E", age, iy, weight)
        if self.use_cache and key in self._cache:
            return self._cache[key]
        F = matrix_exponential(weight * self.generator(age))
        np.maximum(F, 0.0, out=F)
        if self.use_cache:
            self._cache[key] = F
        return F


def interval_transition(h: float, t: float, ctx: RateContext) -> np.ndarray:
    """P(h, t): probability matrix for the interval [h, h+t]."""
    segs = age_segments(h, t)
    P = ctx.year_factor(*segs[0])
    for age, w in segs[1:]:
        P = P @ ctx.year_factor(age, w)
    return P

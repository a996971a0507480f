"""
The :mod:`qscan.evaluate` module measures detected regions against planted truth.

Intervals are inclusive (start, end) pairs of variant indices.
"""

# Copyright 2024 qscan developers

import math
from typing import Sequence, Tuple

import numpy as np
from pydantic import BaseModel, model_validator

from qscan.scores import BandedMatrix

Interval = Tuple[int, int]


class RegionPair(BaseModel):
    a: Tuple[int, int]
    b: Tuple[int, int]

    @model_validator(mode='after')
    def _ordered(self) -> 'RegionPair':
        for start, end in (self.a, self.b):
            if end < start:
                raise ValueError(f'interval end {end} precedes start {start}')
        return self

    def jaccard(self) -> float:
        return jaccard(self.a, self.b)


def _check(interval: Interval) -> Interval:
    start, end = int(interval[0]), int(interval[1])
    if end < start:
        raise ValueError(f'interval end {end} precedes start {start}')
    return start, end


def overlaps(a: Interval, b: Interval) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def jaccard(a: Interval, b: Interval) -> float:
    """
    |a & b| / |a | b| counted in variants.

    Examples
    --------
    jaccard((1, 10), (6, 15)) == 5 / 15
    """
    a, b = _check(a), _check(b)
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def detection_rate(truth: Sequence[Interval], detected: Sequence[Interval]) -> float:
    """Fraction of true regions overlapping at least one detected region"""
    if len(truth) == 0:
        raise ValueError('truth must contain at least one region')
    hits = [any(overlaps(_check(t), _check(d)) for d in detected) for t in truth]
    return sum(hits) / len(truth)


def mean_best_jaccard(truth: Sequence[Interval], detected: Sequence[Interval]) -> float:
    """Mean over true regions of the best Jaccard index against any detected region"""
    if len(truth) == 0:
        raise ValueError('truth must contain at least one region')
    best = [max((jaccard(t, d) for d in detected), default=0.0) for t in truth]
    return sum(best) / len(truth)


def signal_strength_ratio(mu: np.ndarray, band: BandedMatrix, start: int, end: int) -> float:
    """
    ||mu_I||_2^2 / ||Sigma_I||_F for window I = start..end.

    The Frobenius norm of the window covariance equals the L2 norm of its eigenvalues, so this
    is the signal-to-noise ratio that drives detection of region I by the quadratic scan.
    """
    mu_i = np.asarray(mu, dtype=np.float64)[start:end + 1]
    block = band.block(start, end)
    return float(mu_i @ mu_i) / math.sqrt(float(np.sum(block * block)))

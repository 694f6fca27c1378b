"""Evaluation metrics: OSPA error, instantaneous area coverage, detection time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import models
from .geometry import Rect


@dataclass(frozen=True)
class OspaParams:
    """Cutoff c (meters) and order p of the OSPA multi-target error."""

    c: float = 100.0
    p: float = 2.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("ospa cutoff c must be positive")
        if self.p < 1:
            raise ValueError("ospa order p must be at least 1")


def ospa(X, Y, c: float = 100.0, p: float = 2.0) -> float:
    """Optimal sub-pattern assignment distance between planar point sets.

    X and Y are (m, 2) arrays (or empty).  The value is symmetric, lies in
    [0, c], and equals c when exactly one of the sets is empty; two empty sets
    have distance zero by convention.
    """
    OspaParams(c, p)
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    Y = np.asarray(Y, dtype=float).reshape(-1, 2)
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(c)
    if m > n:
        X, Y, m, n = Y, X, n, m
    D = np.minimum(cdist(X, Y), c) ** p
    rows, cols = linear_sum_assignment(D)
    cost = D[rows, cols].sum()
    return float(((cost + c**p * (n - m)) / n) ** (1.0 / p))


def coverage(
    agents,
    sp: models.SensingParams,
    area: Rect,
    gridStep: float = 2.0,
    threshold: float = 0.5,
) -> float:
    """Fraction of the area where the joint detection probability reaches the
    threshold, evaluated on a midpoint grid."""
    agents = list(agents)
    if not agents:
        return 0.0
    grid = area.grid_centers(gridStep)
    miss = np.ones(grid.shape[0])
    for s in agents:
        miss = miss * (1.0 - models.detection_prob_at(grid, s, sp))
    return float(np.mean((1.0 - miss) >= threshold))


def first_detection_time(log) -> int | None:
    """Earliest step at which any agent's rounded cardinality estimate reaches
    one; None if no agent ever detects a target."""
    for record in log.steps:
        if any(n >= 1 for n in record.nRounded):
            return record.step
    return None

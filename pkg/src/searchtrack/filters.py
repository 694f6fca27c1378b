"""Sequential Monte Carlo multi-Bernoulli filter.

A multi-Bernoulli density is represented as a plain list of
:class:`BernoulliComponent` values, each carrying an existence probability and
a weighted particle cloud.  The operations below never mutate their inputs;
particle arrays are treated as immutable once attached to a component, so
densities for distinct agents can be advanced in parallel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import models
from .geometry import Rect

log = logging.getLogger(__name__)

# Existence probabilities are kept strictly below one inside the update ratios
# r/(1-r); probabilities of exactly one would otherwise produce 0/0 forms.
_R_CAP = 1.0 - 1e-9


@dataclass
class BernoulliComponent:
    """One hypothesized target: existence probability plus spatial particles."""

    r: float
    particles: np.ndarray  # (n, 4) states
    weights: np.ndarray  # (n,) non-negative, summing to one

    def mean(self) -> np.ndarray:
        """Weighted particle mean, the component's state estimate."""
        return self.weights @ self.particles

    def validate(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("existence probability must lie in [0, 1]")
        if self.particles.ndim != 2 or self.particles.shape[1] != 4:
            raise ValueError("particles must have shape (n, 4)")
        if self.particles.shape[0] != self.weights.shape[0] or self.weights.shape[0] == 0:
            raise ValueError("particles and weights must have equal, non-zero length")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to one")


# A density is just a list of components; an empty list is the empty density.
MultiBernoulli = list


@dataclass(frozen=True)
class BirthModel:
    """Per-step spontaneous births: components with uniform positions over the area.

    Velocities are drawn zero-mean Gaussian with standard deviation velocityStd.
    """

    count: int = 4
    rBirth: float = 0.02
    velocityStd: float = 1.0
    nParticles: int = 500

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not 0.0 <= self.rBirth < 0.5:
            raise ValueError("rBirth must lie in [0, 0.5)")
        if self.velocityStd < 0:
            raise ValueError("velocityStd must be non-negative")
        if self.nParticles < 1:
            raise ValueError("nParticles must be positive")


class CardinalityStats(NamedTuple):
    """Expected target count, its variance, and the rounded point estimate."""

    nHat: float
    variance: float
    nRounded: int


def predict(
    posterior: Sequence[BernoulliComponent],
    mp: models.MotionParams,
    birth: BirthModel,
    area: Rect,
    rng: np.random.Generator,
) -> MultiBernoulli:
    """One prediction step: persist components and append birth components.

    With a state-independent survival probability the persisting existence
    becomes r * pS and the spatial density is pure particle propagation with
    unchanged weights.
    """
    out: MultiBernoulli = []
    for c in posterior:
        out.append(
            BernoulliComponent(
                r=min(c.r * mp.pS, 1.0),
                particles=models.target_step(c.particles, mp, rng),
                weights=c.weights.copy(),
            )
        )
    for _ in range(birth.count):
        pos = area.sample(rng, birth.nParticles)
        vel = birth.velocityStd * rng.standard_normal((birth.nParticles, 2))
        particles = np.column_stack([pos[:, 0], vel[:, 0], pos[:, 1], vel[:, 1]])
        weights = np.full(birth.nParticles, 1.0 / birth.nParticles)
        out.append(BernoulliComponent(birth.rBirth, particles, weights))
    return out


def clutter_intensity(sp: models.SensingParams, area: Rect) -> float:
    """Clutter intensity kappa(z): Poisson rate times the uniform density over
    the bearing-range window (-pi, pi] x [0, diagonal(area)]."""
    return sp.lambdaClutter / (2.0 * math.pi * area.diagonal)


def update(
    predictive: Sequence[BernoulliComponent],
    Z: Sequence[models.Measurement],
    s,
    sp: models.SensingParams,
    area: Rect,
) -> MultiBernoulli:
    """Measurement update: legacy components plus one component per measurement.

    Legacy components re-weight each predicted component under the hypothesis
    that it generated no measurement; measurement components jointly update all
    predicted components with a single measurement.  Measurement components
    whose normalizer underflows are dropped (and logged) rather than propagated
    as NaN, and existence probabilities are clamped into [0, 1].
    """
    if not predictive:
        return []
    kappa = clutter_intensity(sp, area)

    counts = np.array([len(c.weights) for c in predictive])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    P = np.vstack([c.particles for c in predictive])  # (M, 4)
    W = np.concatenate([c.weights for c in predictive])  # (M,)
    rs = np.array([min(c.r, _R_CAP) for c in predictive])

    pd = models.detection_prob(P, s, sp)  # (M,)
    pd_bar = np.add.reduceat(W * pd, offsets)  # <p_i, pD> per component
    denom = np.maximum(1.0 - rs * pd_bar, 1e-12)

    out: MultiBernoulli = []
    for i, c in enumerate(predictive):
        sl = slice(offsets[i], offsets[i] + counts[i])
        r_leg = c.r * (1.0 - pd_bar[i]) / denom[i]
        w_leg = c.weights * (1.0 - pd[sl])
        total = w_leg.sum()
        if total <= 0.0:
            # Every particle certainly detected: the missed-detection density is
            # empty and the legacy existence is zero anyway.
            w_leg = np.full(counts[i], 1.0 / counts[i])
        else:
            w_leg = w_leg / total
        out.append(BernoulliComponent(float(np.clip(r_leg, 0.0, 1.0)), c.particles, w_leg))

    ratio = rs / (1.0 - rs)
    ratio_per_particle = np.repeat(ratio, counts)
    for z in Z:
        g = models.likelihood(z, P, s, sp)  # (M,)
        lz = g * pd
        inner = np.add.reduceat(W * lz, offsets)  # <p_i, L^z> per component
        numer = np.sum(rs * (1.0 - rs) * inner / denom**2)
        denom_z = kappa + np.sum(rs * inner / denom)
        mix_norm = float(np.sum(ratio * inner))
        if mix_norm < 1e-300 or denom_z <= 0.0 or not np.isfinite(numer / denom_z):
            log.debug("dropping degenerate measurement component for z=%s", z)
            continue
        r_z = numer / denom_z
        if r_z > 1.0:
            log.debug("clamping measurement-component existence %.6f to 1", r_z)
            r_z = 1.0
        w_z = W * ratio_per_particle * lz / mix_norm
        w_z = w_z / w_z.sum()
        out.append(BernoulliComponent(float(r_z), P, w_z))
    return out


def cardinality(density: Sequence[BernoulliComponent]) -> CardinalityStats:
    """Expected number of targets, its variance, and the rounded estimate."""
    rs = np.array([c.r for c in density]) if density else np.zeros(0)
    n_hat = float(rs.sum())
    var = float((rs * (1.0 - rs)).sum())
    return CardinalityStats(n_hat, var, int(math.floor(n_hat + 0.5)))


def extract_states(density: Sequence[BernoulliComponent], n: int) -> np.ndarray:
    """State estimates of the n components with the largest existence, shape (m, 4).

    Ties keep component order; estimates are weighted particle means, which are
    far less noisy than the per-particle density argmax for SMC clouds.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    order = sorted(range(len(density)), key=lambda i: -density[i].r)
    take = order[: min(n, len(density))]
    if not take:
        return np.zeros((0, 4))
    return np.array([density[i].mean() for i in take])


def systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of a systematic resample of size n from the given weights."""
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0  # guard against rounding drift at the tail
    return np.searchsorted(cum, positions)


def prune(
    density: Sequence[BernoulliComponent],
    rMin: float = 1e-3,
    vMax: int = 100,
    nParticlesTarget: int = 500,
    rng: np.random.Generator | None = None,
) -> MultiBernoulli:
    """Housekeeping between steps: threshold on existence, cap the component
    count by descending existence, and resample every survivor to
    nParticlesTarget equally-weighted particles."""
    if rng is None:
        raise ValueError("prune requires a random generator for resampling")
    keep = [c for c in density if c.r >= rMin]
    keep.sort(key=lambda c: -c.r)
    keep = keep[:vMax]
    out: MultiBernoulli = []
    for c in keep:
        idx = systematic_resample(c.weights, nParticlesTarget, rng)
        out.append(
            BernoulliComponent(
                c.r,
                c.particles[idx],
                np.full(nParticlesTarget, 1.0 / nParticlesTarget),
            )
        )
    return out

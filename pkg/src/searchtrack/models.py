"""Single-object models: target dynamics, agent controls, sensing and measurements.

State vectors are plain numpy arrays with layout [px, vx, py, vy] (positions in
meters, velocities in m/s); agent states and control actions are [sx, sy]
position arrays.  All sampling operations take an explicit numpy Generator, so
every function here is pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .geometry import Rect, wrap_angle

# Extracts the (px, py) position block from a state vector.
H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])


class CoincidentPositionsError(ValueError):
    """Raised when a measurement is requested at zero agent-target range."""


class SingularCovarianceError(ValueError):
    """Raised when a process covariance cannot be factorized even after jitter."""


def cv_matrices(T: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Near-constant-velocity transition and process-noise matrices.

    Returns (F, Q) for the [px, vx, py, vy] layout with sampling interval T.
    """
    F = np.array(
        [[1.0, T, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, T], [0.0, 0.0, 0.0, 1.0]]
    )
    q = np.array([[T / 3.0, T / 2.0], [T / 2.0, T]])
    Q = np.zeros((4, 4))
    Q[:2, :2] = q
    Q[2:, 2:] = q
    return F, Q


@dataclass(frozen=True, eq=False)
class MotionParams:
    """Target motion model x' = F x + v with v ~ N(0, Q), plus survival probability."""

    T: float = 1.0
    pS: float = 0.99
    F: np.ndarray | None = None
    Q: np.ndarray | None = None

    def __post_init__(self):
        defF, defQ = cv_matrices(self.T)
        F = defF if self.F is None else np.asarray(self.F, dtype=float)
        Q = defQ if self.Q is None else np.asarray(self.Q, dtype=float)
        if F.shape != (4, 4) or Q.shape != (4, 4):
            raise ValueError("F and Q must be 4x4 matrices")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-9:
            raise ValueError("Q must be positive semi-definite")
        if not 0.0 <= self.pS <= 1.0:
            raise ValueError("pS must lie in [0, 1]")
        if self.T <= 0:
            raise ValueError("T must be positive")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)

    @cached_property
    def _q_sqrt(self) -> np.ndarray:
        # Symmetric square root via eigendecomposition; works for singular Q.
        w, v = np.linalg.eigh(self.Q)
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))

    @cached_property
    def _q_chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.Q)
        except np.linalg.LinAlgError:
            pass
        try:
            # Small diagonal jitter to make density evaluation possible for PSD Q.
            return np.linalg.cholesky(self.Q + 1e-9 * np.eye(4))
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError(
                "process covariance is not invertible, even with diagonal jitter"
            ) from exc


@dataclass(frozen=True)
class SensingParams:
    """Detection-probability and range-bearing measurement noise parameters."""

    pDmax: float = 0.99
    R0: float = 10.0
    eta: float = 0.003
    phi0: float = math.pi / 180.0
    betaPhi: float = 1e-5
    zeta0: float = 1.0
    betaZeta: float = 3e-3
    lambdaClutter: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.pDmax <= 1.0:
            raise ValueError("pDmax must lie in (0, 1]")
        if self.R0 <= 0:
            raise ValueError("R0 must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.phi0 <= 0 or self.zeta0 <= 0:
            raise ValueError("noise floors phi0 and zeta0 must be positive")
        if self.betaPhi < 0 or self.betaZeta < 0:
            raise ValueError("noise slopes betaPhi and betaZeta must be non-negative")
        if self.lambdaClutter < 0:
            raise ValueError("lambdaClutter must be non-negative")


@dataclass(frozen=True)
class ControlParams:
    """Agent mobility: NR rings of Ntheta headings with radial step deltaR."""

    deltaR: float = 2.0
    NR: int = 2
    Ntheta: int = 8

    def __post_init__(self):
        if self.deltaR <= 0:
            raise ValueError("deltaR must be positive")
        if self.NR < 0:
            raise ValueError("NR must be non-negative")
        if self.Ntheta < 1:
            raise ValueError("Ntheta must be at least 1")


class Measurement(NamedTuple):
    """A range-bearing observation; bearing in (-pi, pi] radians, range in meters."""

    bearing: float
    range: float


def target_step(x, mp: MotionParams, rng: np.random.Generator) -> np.ndarray:
    """Advance target states one step: F x + Gaussian process noise.

    Accepts a single state (4,) or a batch (n, 4) and returns the same shape.
    """
    x = np.asarray(x, dtype=float)
    noise = rng.standard_normal(x.shape) @ mp._q_sqrt.T
    return x @ mp.F.T + noise


def transition_density(x_next, x, mp: MotionParams) -> float:
    """Gaussian transition density N(x_next; F x, Q)."""
    d = np.asarray(x_next, dtype=float) - mp.F @ np.asarray(x, dtype=float)
    L = mp._q_chol
    z = solve_triangular(L, d, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return float(np.exp(-0.5 * (z @ z) - 2.0 * math.log(2.0 * math.pi) - 0.5 * log_det))


def admissible_controls(s, cp: ControlParams, area: Rect) -> np.ndarray:
    """Candidate next positions for an agent at s, shape (K, 2).

    Row 0 is always the stay action; the rest are NR rings of Ntheta headings,
    with positions falling outside the area dropped.  For an agent away from
    the boundary this yields exactly 1 + NR * Ntheta distinct actions.
    """
    s = np.asarray(s, dtype=float)
    out = [s]
    dtheta = 2.0 * math.pi / cp.Ntheta
    for l1 in range(1, cp.NR + 1):
        for l2 in range(cp.Ntheta):
            p = s + l1 * cp.deltaR * np.array([math.cos(l2 * dtheta), math.sin(l2 * dtheta)])
            if area.contains(p):
                out.append(p)
    return np.array(out)


def detection_prob_at(p, s, sp: SensingParams):
    """Detection probability at planar positions p (..., 2) for an agent at s."""
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    d = np.linalg.norm(p - s, axis=-1)
    pd = np.where(d < sp.R0, sp.pDmax, np.maximum(0.0, sp.pDmax - sp.eta * (d - sp.R0)))
    if pd.ndim == 0:
        return float(pd)
    return pd


def detection_prob(x, s, sp: SensingParams):
    """Detection probability of target states x (..., 4) from an agent at s."""
    x = np.asarray(x, dtype=float)
    return detection_prob_at(x[..., [0, 2]], s, sp)


def predicted_measurement(x, s):
    """Noise-free (bearing, range) of states x (..., 4) seen from agent position s.

    The bearing convention is atan2(sy - py, sx - px): the four-quadrant angle
    of the agent as seen from the target, which resolves the quadrant ambiguity
    of a single-argument arctan ratio.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    delta = s - x[..., [0, 2]]
    rng_ = np.linalg.norm(delta, axis=-1)
    bearing = np.arctan2(delta[..., 1], delta[..., 0])
    return bearing, rng_


def noise_free_measurement(x, s) -> Measurement:
    """Ideal measurement of a single target state from an agent position."""
    bearing, rng_ = predicted_measurement(x, s)
    if rng_ == 0.0:
        raise CoincidentPositionsError("agent and target positions coincide; bearing undefined")
    return Measurement(float(bearing), float(rng_))


def measurement_sigmas(d, sp: SensingParams):
    """Range-dependent noise standard deviations (sigma_phi, sigma_zeta) at distance d."""
    d = np.asarray(d, dtype=float)
    return sp.phi0 + sp.betaPhi * d, sp.zeta0 + sp.betaZeta * d**2


def measure(x, s, sp: SensingParams, rng: np.random.Generator) -> Measurement:
    """Noisy range-bearing measurement of a single target state.

    Gaussian noise with range-dependent standard deviations is added to the
    ideal measurement; the bearing is re-wrapped to (-pi, pi] and the range is
    clipped at zero.
    """
    z0 = noise_free_measurement(x, s)
    s_phi, s_zeta = measurement_sigmas(z0.range, sp)
    bearing = wrap_angle(z0.bearing + s_phi * rng.standard_normal())
    rng_ = max(0.0, z0.range + s_zeta * rng.standard_normal())
    return Measurement(float(bearing), float(rng_))


def likelihood(z: Measurement, x, s, sp: SensingParams):
    """Measurement likelihood g(z | x, s) for states x (..., 4).

    Product of two univariate Gaussians: the bearing residual (wrapped to
    (-pi, pi] so densities are continuous across the cut) and the range
    residual, each with its range-dependent standard deviation.
    """
    bearing, rng_ = predicted_measurement(x, s)
    if np.any(rng_ == 0.0):
        raise CoincidentPositionsError("agent and target positions coincide; bearing undefined")
    s_phi, s_zeta = measurement_sigmas(rng_, sp)
    rb = wrap_angle(z.bearing - bearing)
    rr = z.range - rng_
    dens = np.exp(-0.5 * ((rb / s_phi) ** 2 + (rr / s_zeta) ** 2)) / (
        2.0 * math.pi * s_phi * s_zeta
    )
    if np.ndim(dens) == 0:
        return float(dens)
    return dens

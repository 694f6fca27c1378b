"""Planar geometry helpers shared across the library."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap an angle (or array of angles) in radians to the interval (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float), TWO_PI)
    w = np.where(w > np.pi, w - TWO_PI, w)
    if w.ndim == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, used for surveillance areas and spawn regions."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("Rect requires xmax > xmin and ymax > ymin")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def contains(self, xy):
        """Membership test for one point (2,) or a batch (..., 2); closed boundary."""
        p = np.asarray(xy, dtype=float)
        inside = (
            (p[..., 0] >= self.xmin)
            & (p[..., 0] <= self.xmax)
            & (p[..., 1] >= self.ymin)
            & (p[..., 1] <= self.ymax)
        )
        if inside.ndim == 0:
            return bool(inside)
        return inside

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Uniform points inside the rectangle: shape (2,) if n is None, else (n, 2)."""
        size = (2,) if n is None else (n, 2)
        return rng.uniform((self.xmin, self.ymin), (self.xmax, self.ymax), size=size)

    def grid_centers(self, step: float) -> np.ndarray:
        """Cell midpoints of a regular grid with target cell size ``step``, shape (M, 2).

        The rectangle is split into ceil(extent/step) cells per axis so the cells
        tile it exactly; the mean over centers is a midpoint quadrature rule.
        """
        if step <= 0:
            raise ValueError("grid step must be positive")
        nx = max(1, int(np.ceil(self.width / step)))
        ny = max(1, int(np.ceil(self.height / step)))
        xs = self.xmin + (np.arange(nx) + 0.5) * (self.width / nx)
        ys = self.ymin + (np.arange(ny) + 0.5) * (self.height / ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

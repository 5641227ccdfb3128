"""Piecewise-linear scalar curves on explicit grids.

These curves back the static capacitance C(v), the charge characteristic Q(v)
and the instantaneous-resistor characteristic V(i). Interpolation is exact at
grid points, evaluation outside the grid clamps to the endpoint value, and
integrals/derivatives are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidParametersError


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise InvalidParametersError(f"{name} must be one-dimensional")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidParametersError(f"{name} must contain only finite values")
    return arr


@dataclass(frozen=True, eq=False)
class MonotoneCurve:
    """Piecewise-linear function on a strictly increasing grid.

    The arrays are copied and frozen at construction; treat instances as
    immutable values.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = _as_float_array(self.grid, "grid")
        values = _as_float_array(self.values, "values")
        if grid.size < 2:
            raise InvalidParametersError("curve needs at least two grid points")
        if grid.size != values.size:
            raise InvalidParametersError("grid and values must have equal length")
        if not np.all(np.diff(grid) > 0.0):
            raise InvalidParametersError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_x_lo", float(grid[0]))
        object.__setattr__(self, "_x_hi", float(grid[-1]))

    @property
    def x_min(self) -> float:
        return self._x_lo

    @property
    def x_max(self) -> float:
        return self._x_hi

    def eval(self, x):
        """Interpolate at ``x`` (scalar or array), clamping outside the grid."""
        y = np.interp(x, self.grid, self.values)
        return float(y) if np.isscalar(x) else y

    __call__ = eval

    def out_of_range(self, x) -> bool:
        """True if any requested point lies outside the grid."""
        x = np.asarray(x, dtype=float)
        return bool(np.any(x < self.grid[0]) or np.any(x > self.grid[-1]))

    def slope_at(self, x: float) -> float:
        """Exact slope of the interpolant at ``x``.

        At interior knots the left segment wins (deterministic tie-break); in
        the clamped regions outside the grid the slope is zero. At the first
        knot, where no left segment exists, the first segment's slope is used.
        """
        g = self.grid
        if x < g[0] or x > g[-1]:
            return 0.0
        idx = int(np.searchsorted(g, x, side="left"))
        idx = min(max(idx, 1), g.size - 1)
        return float((self.values[idx] - self.values[idx - 1]) / (g[idx] - g[idx - 1]))

    def eval_and_slope(self, x: float) -> tuple[float, float]:
        """Value and slope at a scalar ``x`` with one segment lookup.

        Matches eval() and slope_at() exactly, knot values included.
        """
        g = self.grid
        v = self.values
        if x < g[0]:
            return float(v[0]), 0.0
        if x > g[-1]:
            return float(v[-1]), 0.0
        idx = int(np.searchsorted(g, x, side="left"))
        idx = min(max(idx, 1), g.size - 1)
        slope = float((v[idx] - v[idx - 1]) / (g[idx] - g[idx - 1]))
        if x == g[idx]:
            return float(v[idx]), slope
        return float(v[idx - 1]) + slope * (x - float(g[idx - 1])), slope

    @cached_property
    def _knot_integrals(self) -> np.ndarray:
        seg = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.grid)
        return np.concatenate(([0.0], np.cumsum(seg)))

    def _antiderivative(self, x: float) -> float:
        # F(grid[0]) = 0; outside the grid the curve continues as a constant.
        g, v = self.grid, self.values
        if x <= g[0]:
            return float((x - g[0]) * v[0])
        if x >= g[-1]:
            return float(self._knot_integrals[-1] + (x - g[-1]) * v[-1])
        idx = int(np.searchsorted(g, x, side="right")) - 1
        y = v[idx] + (v[idx + 1] - v[idx]) * (x - g[idx]) / (g[idx + 1] - g[idx])
        return float(self._knot_integrals[idx] + 0.5 * (v[idx] + y) * (x - g[idx]))

    def integrate(self, a: float, b: float) -> float:
        """Exact integral of the interpolant from ``a`` to ``b``."""
        return self._antiderivative(b) - self._antiderivative(a)

    def resampled(self, grid) -> "MonotoneCurve":
        """New curve sampled at ``grid`` (values interpolated from this one)."""
        grid = np.asarray(grid, dtype=float)
        return MonotoneCurve(grid, np.interp(grid, self.grid, self.values))


def isotonic_nondecreasing(y, weights=None) -> np.ndarray:
    """Weighted least-squares projection onto nondecreasing sequences.

    Pool-adjacent-violators; O(n). Ties are merged into flat runs.
    """
    y = np.asarray(y, dtype=float)
    if weights is None:
        weights = np.ones_like(y)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != y.shape or np.any(weights <= 0):
            raise InvalidParametersError("weights must be positive and match y")

    # Each block is [mean, weight, count]; violating neighbours get pooled.
    blocks: list[list[float]] = []
    for val, w in zip(y, weights):
        blocks.append([float(val), float(w), 1])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2, c2 = blocks.pop()
            m1, w1, c1 = blocks.pop()
            w = w1 + w2
            blocks.append([(m1 * w1 + m2 * w2) / w, w, c1 + c2])
    out = np.empty_like(y)
    pos = 0
    for mean, _, count in blocks:
        out[pos:pos + count] = mean
        pos += count
    return out

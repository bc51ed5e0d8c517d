"""Uniform box grids and finite-difference stencils (1D and 2D)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Box:
    """Axis-aligned box; lo/hi are floats (1D) or length-d arrays."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape:
            raise ValueError("box lo/hi shape mismatch")
        if np.any(self.hi <= self.lo):
            raise ValueError("box must have positive extent on every axis")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


@dataclass
class GridField:
    """Scalar values on a uniform box grid, d in {1, 2}.

    values has shape (n0,) in 1D and (n0, n1) row-major in 2D, axis 0
    along x.
    """

    box: Box
    values: np.ndarray
    _axes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.box.dim:
            raise ValueError("values rank does not match box dimension")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if any(n < 2 for n in self.values.shape):
            raise ValueError("need at least 2 points per axis")
        self._axes = tuple(
            np.linspace(self.box.lo[k], self.box.hi[k], self.values.shape[k])
            for k in range(self.box.dim)
        )

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def n(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return self.box.extent / (np.array(self.values.shape) - 1)

    def axis(self, k: int = 0) -> np.ndarray:
        return self._axes[k]

    @property
    def x(self) -> np.ndarray:
        return self._axes[0]

    def interior_mask(self, shell_frac: float = 0.05) -> np.ndarray:
        """Mask excluding a sentinel shell of relative width shell_frac."""
        masks = []
        for k, n in enumerate(self.values.shape):
            m = max(2, int(np.ceil(shell_frac * n)))
            ax = np.zeros(n, dtype=bool)
            ax[m:n - m] = True
            masks.append(ax)
        if self.dim == 1:
            return masks[0]
        return np.outer(masks[0], masks[1])

    @classmethod
    def from_function(cls, box: Box, n, fn) -> "GridField":
        n = np.atleast_1d(np.asarray(n, dtype=int))
        if box.dim == 1:
            x = np.linspace(box.lo[0], box.hi[0], int(n[0]))
            return cls(box, np.asarray(fn(x), dtype=float))
        x = np.linspace(box.lo[0], box.hi[0], int(n[0]))
        y = np.linspace(box.lo[1], box.hi[1], int(n[-1]))
        X, Y = np.meshgrid(x, y, indexing="ij")
        return cls(box, np.asarray(fn(X, Y), dtype=float))


def deriv1(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """4th-order first derivative, one-sided 2nd-order at edges."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
    out[1] = (v[2] - v[0]) / (2 * h)
    out[-2] = (v[-1] - v[-3]) / (2 * h)
    out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def deriv2(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """4th-order second derivative (5-point), 2nd-order near edges."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (-v[:-4] + 16 * v[1:-3] - 30 * v[2:-2] + 16 * v[3:-1] - v[4:]) / (12 * h * h)
    out[1] = (v[0] - 2 * v[1] + v[2]) / (h * h)
    out[-2] = (v[-3] - 2 * v[-2] + v[-1]) / (h * h)
    out[0] = out[1]
    out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def hessian_eigs_2d(values: np.ndarray, hx: float, hy: float):
    """Pointwise (lambda_min, lambda_max) of the 2x2 grid Hessian."""
    fxx = deriv2(values, hx, axis=0)
    fyy = deriv2(values, hy, axis=1)
    fxy = deriv1(deriv1(values, hx, axis=0), hy, axis=1)
    tr = fxx + fyy
    disc = np.sqrt(np.maximum((fxx - fyy) ** 2 + 4 * fxy ** 2, 0.0))
    return (tr - disc) / 2, (tr + disc) / 2

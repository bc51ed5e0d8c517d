"""Potential families, reciprocal potentials, and weak semiconvexity scans.

The scan operations estimate, for a gradient oracle grad phi, the profile

    kappa(r) = r^-2 * inf_{|x - xh| = r} <grad phi(x) - grad phi(xh), x - xh>

and its anisotropic variant over a user-declared compact box.  The infimum
over all of R^d is out of reach numerically; all verification potentials
here are coercive, which pushes the argmin inside the box, and every
estimate reports the box it was computed on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .grids import Box, GridField, deriv1, deriv2


class UnknownFamilyError(ValueError):
    pass


_PERT_SHAPES = ("tanh", "sin", "logcosh")


@dataclass
class PotentialSpec:
    """Parametric scalar field family with value/gradient/Hessian.

    families:
      quadratic                     params: (M,) with M scalar or (d,d) SPD-symmetric
      quartic                       params: (c,): c * sum_i x_i^4
      lipschitz_perturbed_quadratic params: (m, c, scale, shape): m|x|^2/2 + c*pert(<u,x>/scale)
      tabulated                     params: GridField, stencil derivatives
      sum                           params: list of PotentialSpec

    A multiplicative ramp (1 + time_ramp * t) supplies simple time
    dependence with an analytic time derivative.
    """

    family: str
    params: tuple = ()
    dim: int = 1
    time_ramp: float = 0.0
    pert_direction: Optional[np.ndarray] = None

    def __post_init__(self):
        known = ("quadratic", "quartic", "lipschitz_perturbed_quadratic", "tabulated", "sum")
        if self.family not in known:
            raise UnknownFamilyError(f"unknown potential family {self.family!r}")
        self._validate()

    def _validate(self):
        f, p = self.family, self.params
        if f == "quadratic":
            if len(p) != 1:
                raise ValueError("quadratic expects params (M,)")
            M = np.asarray(p[0], dtype=float)
            if M.ndim == 2 and not np.allclose(M, M.T):
                raise ValueError("quadratic matrix must be symmetric")
        elif f == "quartic":
            if len(p) != 1:
                raise ValueError("quartic expects params (c,)")
        elif f == "lipschitz_perturbed_quadratic":
            if len(p) != 4 or p[3] not in _PERT_SHAPES:
                raise ValueError("lipschitz_perturbed_quadratic expects (m, c, scale, shape)")
            if self.pert_direction is None:
                u = np.zeros(self.dim)
                u[0] = 1.0
                self.pert_direction = u
            self.pert_direction = np.asarray(self.pert_direction, dtype=float)
            self.pert_direction = self.pert_direction / np.linalg.norm(self.pert_direction)
        elif f == "tabulated":
            if len(p) != 1 or not isinstance(p[0], GridField):
                raise ValueError("tabulated expects a single GridField")
            self.dim = p[0].dim
        elif f == "sum":
            if not p or not all(isinstance(s, PotentialSpec) for s in p):
                raise ValueError("sum expects PotentialSpec children")
            dims = {s.dim for s in p}
            if len(dims) != 1:
                raise ValueError("sum children disagree on dimension")
            self.dim = dims.pop()

    # -- constructors ----------------------------------------------------
    @classmethod
    def quadratic(cls, M=1.0, dim: int = 1, time_ramp: float = 0.0) -> "PotentialSpec":
        M = np.asarray(M, dtype=float)
        if M.ndim == 2:
            dim = M.shape[0]
        return cls("quadratic", (M,), dim=dim, time_ramp=time_ramp)

    @classmethod
    def quartic(cls, c=1.0, dim: int = 1) -> "PotentialSpec":
        return cls("quartic", (float(c),), dim=dim)

    @classmethod
    def lipschitz_perturbed(cls, m=1.0, c=0.1, scale=1.0, shape="tanh",
                            dim: int = 1, direction=None) -> "PotentialSpec":
        return cls("lipschitz_perturbed_quadratic", (float(m), float(c), float(scale), shape),
                   dim=dim, pert_direction=direction)

    @classmethod
    def tabulated(cls, grid: GridField) -> "PotentialSpec":
        return cls("tabulated", (grid,), dim=grid.dim)

    @classmethod
    def zero(cls, dim: int = 1) -> "PotentialSpec":
        return cls.quadratic(np.zeros((dim, dim)) if dim > 1 else 0.0, dim=dim)

    @classmethod
    def total(cls, *specs: "PotentialSpec") -> "PotentialSpec":
        return cls("sum", tuple(specs))

    # -- perturbation bookkeeping ----------------------------------------
    @property
    def lipschitz_constant(self) -> float:
        """Declared Lipschitz constant of the perturbation term."""
        if self.family == "lipschitz_perturbed_quadratic":
            _, c, scale, shape = self.params
            return abs(c) / scale  # |pert'| <= 1 for every shape
        if self.family == "sum":
            return sum(s.lipschitz_constant for s in self.params)
        return 0.0

    @property
    def pert_hessian_bound(self) -> float:
        if self.family == "lipschitz_perturbed_quadratic":
            _, c, scale, shape = self.params
            peak = {"tanh": 4.0 / (3.0 * math.sqrt(3.0)), "sin": 1.0, "logcosh": 1.0}[shape]
            return abs(c) * peak / scale ** 2
        if self.family == "sum":
            return sum(s.pert_hessian_bound for s in self.params)
        return 0.0

    # -- evaluation -------------------------------------------------------
    def _ramp(self, t: float) -> float:
        return 1.0 + self.time_ramp * t

    def value(self, t, x):
        """Value at points x of shape (..., d); returns shape (...)."""
        x = _as_points(x, self.dim)
        return self._value0(x) * self._ramp(t)

    def grad(self, t, x):
        x = _as_points(x, self.dim)
        return self._grad0(x) * self._ramp(t)

    def hess(self, t, x):
        x = _as_points(x, self.dim)
        return self._hess0(x) * self._ramp(t)

    def dt(self, t, x):
        """Analytic time derivative (multiplicative ramp only)."""
        x = _as_points(x, self.dim)
        return self._value0(x) * self.time_ramp

    def _value0(self, x):
        f, p = self.family, self.params
        if f == "quadratic":
            M = _as_matrix(p[0], self.dim)
            return 0.5 * np.einsum("...i,ij,...j->...", x, M, x)
        if f == "quartic":
            return p[0] * np.sum(x ** 4, axis=-1)
        if f == "lipschitz_perturbed_quadratic":
            m, c, scale, shape = p
            s = np.einsum("...i,i->...", x, self.pert_direction) / scale
            return 0.5 * m * np.sum(x ** 2, axis=-1) + c * _pert(shape, s) * scale
        if f == "tabulated":
            return _tab_eval(p[0], x, order=0)
        return sum(s._value0(x) for s in p)

    def _grad0(self, x):
        f, p = self.family, self.params
        if f == "quadratic":
            M = _as_matrix(p[0], self.dim)
            return np.einsum("ij,...j->...i", M, x)
        if f == "quartic":
            return 4.0 * p[0] * x ** 3
        if f == "lipschitz_perturbed_quadratic":
            m, c, scale, shape = p
            s = np.einsum("...i,i->...", x, self.pert_direction) / scale
            return m * x + (c * _pert_d1(shape, s))[..., None] * self.pert_direction
        if f == "tabulated":
            return _tab_eval(p[0], x, order=1)
        return sum(s._grad0(x) for s in p)

    def _hess0(self, x):
        f, p = self.family, self.params
        d = self.dim
        if f == "quadratic":
            M = _as_matrix(p[0], d)
            return np.broadcast_to(M, x.shape[:-1] + (d, d)).copy()
        if f == "quartic":
            H = np.zeros(x.shape[:-1] + (d, d))
            idx = np.arange(d)
            H[..., idx, idx] = 12.0 * p[0] * x ** 2
            return H
        if f == "lipschitz_perturbed_quadratic":
            m, c, scale, shape = p
            s = np.einsum("...i,i->...", x, self.pert_direction) / scale
            uu = np.outer(self.pert_direction, self.pert_direction)
            H = m * np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
            H += (c * _pert_d2(shape, s) / scale)[..., None, None] * uu
            return H
        if f == "tabulated":
            return _tab_eval(p[0], x, order=2)
        return sum(s._hess0(x) for s in p)


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != dim:
        if dim == 1:
            x = x[..., None]
        else:
            raise ValueError(f"points have trailing size {x.shape[-1]}, expected {dim}")
    return x


def _as_matrix(M, dim):
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        return float(M) * np.eye(dim)
    return M


def _pert(shape, s):
    if shape == "tanh":
        return np.tanh(s)
    if shape == "sin":
        return np.sin(s)
    return np.logaddexp(s, -s) - math.log(2.0)  # log cosh, overflow-safe


def _pert_d1(shape, s):
    if shape == "tanh":
        return 1.0 / np.cosh(s) ** 2
    if shape == "sin":
        return np.cos(s)
    return np.tanh(s)


def _pert_d2(shape, s):
    if shape == "tanh":
        return -2.0 * np.tanh(s) / np.cosh(s) ** 2
    if shape == "sin":
        return -np.sin(s)
    return 1.0 / np.cosh(s) ** 2


_TAB_CACHE: dict = {}


def _tab_spline(g: GridField):
    key = id(g)
    if key not in _TAB_CACHE:
        if g.dim == 1:
            _TAB_CACHE[key] = CubicSpline(g.x, g.values)
        else:
            _TAB_CACHE[key] = RectBivariateSpline(g.axis(0), g.axis(1), g.values, kx=4, ky=4)
    return _TAB_CACHE[key]


def _tab_eval(g: GridField, x, order: int):
    """Tabulated family: spline built on 5-point-stencil-compatible degree."""
    sp = _tab_spline(g)
    if g.dim == 1:
        xi = x[..., 0]
        if order == 0:
            return sp(xi)
        if order == 1:
            return sp(xi, 1)[..., None]
        return sp(xi, 2)[..., None, None]
    xi, yi = x[..., 0], x[..., 1]
    if order == 0:
        return sp.ev(xi, yi)
    if order == 1:
        return np.stack([sp.ev(xi, yi, dx=1), sp.ev(xi, yi, dy=1)], axis=-1)
    hxx = sp.ev(xi, yi, dx=2)
    hyy = sp.ev(xi, yi, dy=2)
    hxy = sp.ev(xi, yi, dx=1, dy=1)
    H = np.empty(x.shape[:-1] + (2, 2))
    H[..., 0, 0] = hxx
    H[..., 1, 1] = hyy
    H[..., 0, 1] = H[..., 1, 0] = hxy
    return H


def eval_potential(spec: PotentialSpec, t: float, x):
    """(value, gradient, hessian) at a single point x."""
    x = _as_points(x, spec.dim)
    return spec.value(t, x), spec.grad(t, x), spec.hess(t, x)


def reciprocal_potential(specU: PotentialSpec, a, t: float, x):
    """0.5 grad U . a grad U - 0.5 Tr[a hess U] - dU/dt at points x."""
    a = _as_matrix(a, specU.dim)
    _check_spd(a)
    g = specU.grad(t, x)
    H = specU.hess(t, x)
    quad = 0.5 * np.einsum("...i,ij,...j->...", g, a, g)
    trace = 0.5 * np.einsum("ij,...ji->...", a, H)
    return quad - trace - specU.dt(t, x)


def reciprocal_spec_callable(specU: PotentialSpec, a, specV: Optional[PotentialSpec] = None):
    """Callable x -> (A_U + V)(x) at t=0, for scans and eigensolves."""
    def w(x):
        out = reciprocal_potential(specU, a, 0.0, x)
        if specV is not None:
            out = out + specV.value(0.0, x)
        return out
    return w


def _check_spd(a):
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, a.T):
        raise ValueError("matrix must be symmetric")
    if np.any(np.linalg.eigvalsh(a) <= 0):
        raise ValueError("matrix must be positive definite")


@dataclass
class KappaEstimate:
    """Sampled weak semiconvexity profile with realizing pairs.

    values[i] (isotropic) or values[i, j] (radius i, direction j) is the
    sampled infimum; argmin_pairs stores the (x, xh) realizing each one.
    """

    radii: np.ndarray
    values: np.ndarray
    argmin_pairs: np.ndarray
    box: Box
    metric_matrix: np.ndarray
    directions: Optional[np.ndarray] = None

    def value_at_pair(self, grad: Callable, i: int, j: Optional[int] = None, a=None) -> float:
        """Recompute the quotient at a stored argmin pair."""
        pair = self.argmin_pairs[i] if j is None else self.argmin_pairs[i, j]
        x, xh = pair[0], pair[1]
        A = self.metric_matrix
        amat = np.eye(A.shape[0]) if a is None else _as_matrix(a, A.shape[0])
        dg = np.asarray(grad(x[None, :]))[0] - np.asarray(grad(xh[None, :]))[0]
        dx = A @ (x - xh)
        return float(dg @ amat.T @ A.T @ dx / (dx @ dx))

    def min_over_directions(self) -> np.ndarray:
        if self.values.ndim == 1:
            return self.values
        return self.values.min(axis=1)


def _fan(n: int) -> np.ndarray:
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def _anchors(box: Box, n_samples: int) -> np.ndarray:
    """Nested anchor lattice: doubling n_samples refines in place."""
    axes = [np.linspace(box.lo[k], box.hi[k], n_samples + 1) for k in range(box.dim)]
    if box.dim == 1:
        return axes[0][:, None]
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def kappa_profile(grad: Callable, radii: Sequence[float], domain: Box,
                  n_samples: int = 512) -> KappaEstimate:
    """Isotropic scan: exhaustive 1D anchors, 2D anchors x 64-direction fan."""
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ValueError("radii must be non-empty")
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    if np.max(radii) > domain.diameter:
        raise ValueError("radius exceeds the domain diameter")
    dirs = np.array([[1.0]]) if domain.dim == 1 else _fan(64)
    est = _kappa_scan(grad, np.eye(domain.dim), np.eye(domain.dim), radii, dirs,
                      domain, n_samples)
    vals = est.values.min(axis=1)
    pick = est.values.argmin(axis=1)
    pairs = est.argmin_pairs[np.arange(radii.size), pick]
    return KappaEstimate(radii, vals, pairs, domain, np.eye(domain.dim))


def kappa_anisotropic(grad: Callable, A, a, radii: Sequence[float],
                      directions: Sequence, domain: Box,
                      n_samples: int = 512) -> KappaEstimate:
    """Anisotropic scan per (r, e): pairs with A(x - xh) = r e."""
    A = _as_matrix(A, domain.dim)
    a = _as_matrix(a, domain.dim)
    _check_spd(A)
    _check_spd(a)
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 0):
        raise ValueError("radii must be positive and non-empty")
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    norms = np.linalg.norm(directions, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-12):
        raise ValueError("directions must be unit vectors")
    return _kappa_scan(grad, A, a, radii, directions, domain, n_samples)


def _kappa_scan(grad, A, a, radii, directions, domain, n_samples):
    anchors = _anchors(domain, n_samples)
    g_anchor = np.asarray(grad(anchors))
    if g_anchor.ndim == 1:
        g_anchor = g_anchor[:, None]
    Ainv = np.linalg.inv(A)
    nr, ne = radii.size, directions.shape[0]
    values = np.full((nr, ne), np.inf)
    pairs = np.zeros((nr, ne, 2, domain.dim))
    Aa = A @ a
    for j, e in enumerate(directions):
        step = Ainv @ e
        for i, r in enumerate(radii):
            xh = anchors - r * step
            ok = domain.contains(xh)
            if not np.any(ok):
                continue
            gx = g_anchor[ok]
            gxh = np.asarray(grad(xh[ok]))
            if gxh.ndim == 1:
                gxh = gxh[:, None]
            # <A a [grad(x)-grad(xh)], A(x-xh)> / |A(x-xh)|^2 with A(x-xh) = r e
            quot = (gx - gxh) @ (Aa.T @ e) / r
            k = int(np.argmin(quot))
            values[i, j] = quot[k]
            pairs[i, j, 0] = anchors[ok][k]
            pairs[i, j, 1] = xh[ok][k]
    return KappaEstimate(radii, values, pairs, domain, A, directions=directions)


def grad_oracle(spec: PotentialSpec, t: float = 0.0) -> Callable:
    """Vectorized gradient closure for scans."""
    return lambda X: spec.grad(t, X)


def numeric_grad(fn: Callable, dim: int, h: float = 1e-5) -> Callable:
    """Central-difference gradient of a vectorized scalar field."""
    def g(X):
        X = _as_points(X, dim)
        out = np.empty_like(X)
        for k in range(dim):
            dx = np.zeros(dim)
            dx[k] = h
            out[..., k] = (fn(X + dx) - fn(X - dx)) / (2 * h)
        return out
    return g

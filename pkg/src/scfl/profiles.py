"""Convexity-profile families and residual certification.

A profile f(t, r[, e]) certifies a weak semiconvexity lower bound
kappa(r) >= f(t, r)/r along the flow provided it satisfies

    d_t f + 2 sigma_bar^2 d_rr f >= f d_r f - r kappa(t, r, e)
                                    + (4r)^-1 |P_e^perp grad_e f|^2

with limsup_{r -> 0} f <= 0.  profile_residual evaluates the left minus
right side on a grid; min >= -tol certifies the profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline

__all__ = [
    "ProfileFn", "LinearProfile", "HLProfile", "SumProfile",
    "LinearHyperbolicProfile", "StationaryLipProfile", "AsymptoticProfile",
    "GridProfile", "RiccatiQuadraticProfile", "ConstantProfile",
    "profile_hL", "profile_linear_hyperbolic", "stationary_profile_lip",
    "concatenation_params", "construct_asymptotic_profile", "riccati_anisotropic",
    "RiccatiBlowupError",
    "profile_residual", "ResidualReport", "ProfileBranchError",
    "ProfileConstructionError",
]


class ProfileBranchError(ValueError):
    """Parameter combination outside the closed-form branch."""


class ProfileConstructionError(RuntimeError):
    """Constructive profile builder could not complete."""


def profile_hL(L: float, sigma_bar: float, r):
    """2 sigma sqrt(L) tanh(sqrt(L) r / (2 sigma)); the stationary scale."""
    if L < 0:
        raise ValueError("L must be >= 0")
    if sigma_bar <= 0:
        raise ValueError("sigma_bar must be > 0")
    r = np.asarray(r, dtype=float)
    if L == 0:
        return np.zeros_like(r)
    c = math.sqrt(L) / (2 * sigma_bar)
    return 2 * sigma_bar * math.sqrt(L) * np.tanh(c * r)


class ProfileFn:
    """Base profile. Subclasses override the analytic derivatives."""

    kind = "base"
    sigma_bar = 1.0
    time_dependent = False

    def value(self, t, r, e=None):
        raise NotImplementedError

    def d_r(self, t, r, e=None, h=1e-6):
        return (self.value(t, np.asarray(r) + h, e) - self.value(t, np.asarray(r) - h, e)) / (2 * h)

    def d_rr(self, t, r, e=None, h=1e-5):
        r = np.asarray(r, dtype=float)
        return (self.value(t, r + h, e) - 2 * self.value(t, r, e) + self.value(t, r - h, e)) / h ** 2

    def d_t(self, t, r, e=None, h=1e-6):
        if not self.time_dependent:
            return np.zeros_like(np.asarray(r, dtype=float))
        return (self.value(t + h, r, e) - self.value(t - h, r, e)) / (2 * h)

    def angular_sq(self, t, r, e=None):
        """|P_e^perp grad_e f|^2; zero for isotropic profiles."""
        return np.zeros_like(np.asarray(r, dtype=float))

    def antiderivative(self, r):
        """int_0^r f(u) du for stationary profiles (terminal weights)."""
        raise NotImplementedError(f"{self.kind} has no closed antiderivative")

    def zero_limit_ok(self, ts=(0.0,), tol: float = 1e-9) -> bool:
        """Sampled limsup_{r->0} f(t, r) <= 0 check."""
        rs = np.logspace(-6, -2, 9)
        return all(np.max(self.value(t, rs)) <= tol for t in ts)


@dataclass
class ConstantProfile(ProfileFn):
    c: float = 0.0
    kind = "linear"

    def value(self, t, r, e=None):
        return np.full_like(np.asarray(r, dtype=float), self.c)

    def d_r(self, t, r, e=None, **kw):
        return np.zeros_like(np.asarray(r, dtype=float))

    d_rr = d_r

    def antiderivative(self, r):
        return self.c * np.asarray(r, dtype=float)


@dataclass
class LinearProfile(ProfileFn):
    slope: float
    intercept: float = 0.0
    kind = "linear"

    def value(self, t, r, e=None):
        return self.slope * np.asarray(r, dtype=float) + self.intercept

    def d_r(self, t, r, e=None, **kw):
        return np.full_like(np.asarray(r, dtype=float), self.slope)

    def d_rr(self, t, r, e=None, **kw):
        return np.zeros_like(np.asarray(r, dtype=float))

    def antiderivative(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * self.slope * r ** 2 + self.intercept * r


@dataclass
class HLProfile(ProfileFn):
    """coeff * h_L(r + shift); coeff=-1 is the stationary invariant profile."""

    L: float
    sigma_bar: float = 1.0
    coeff: float = -1.0
    shift: float = 0.0
    kind = "tanh"

    def _c(self):
        return math.sqrt(self.L) / (2 * self.sigma_bar) if self.L > 0 else 0.0

    def value(self, t, r, e=None):
        return self.coeff * profile_hL(self.L, self.sigma_bar, np.asarray(r, dtype=float) + self.shift)

    def d_r(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if self.L == 0:
            return np.zeros_like(r)
        return self.coeff * self.L / np.cosh(self._c() * (r + self.shift)) ** 2

    def d_rr(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if self.L == 0:
            return np.zeros_like(r)
        c = self._c()
        z = c * (r + self.shift)
        return -self.coeff * (self.L ** 1.5 / self.sigma_bar) * np.tanh(z) / np.cosh(z) ** 2

    def antiderivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.L == 0:
            return np.zeros_like(r)
        c = self._c()
        logcosh = lambda z: np.logaddexp(z, -z) - math.log(2.0)
        s2 = 4 * self.sigma_bar ** 2
        return self.coeff * s2 * (logcosh(c * (r + self.shift)) - logcosh(c * self.shift))


@dataclass
class SumProfile(ProfileFn):
    parts: Sequence[ProfileFn]
    kind = "concatenated"

    def __post_init__(self):
        self.time_dependent = any(p.time_dependent for p in self.parts)
        self.sigma_bar = self.parts[0].sigma_bar if self.parts else 1.0

    def value(self, t, r, e=None):
        return sum(p.value(t, r, e) for p in self.parts)

    def d_r(self, t, r, e=None, **kw):
        return sum(p.d_r(t, r, e) for p in self.parts)

    def d_rr(self, t, r, e=None, **kw):
        return sum(p.d_rr(t, r, e) for p in self.parts)

    def d_t(self, t, r, e=None, **kw):
        return sum(p.d_t(t, r, e) for p in self.parts)

    def antiderivative(self, r):
        return sum(p.antiderivative(r) for p in self.parts)


# ---------------------------------------------------------------------------
# Linear-hyperbolic family: f_t(r) = A(t) r - B(t) h_L(B(t) r), with
# dA/dt = A^2 - beta, dB/dt = A B, terminal data f_T(r) = alpha r - h_L(r).
# ---------------------------------------------------------------------------

def _linear_hyperbolic_AB(alpha: float, beta: float, T: float, t):
    t = np.asarray(t, dtype=float)
    s = T - t
    if np.any(s < 0):
        raise ValueError("t must be <= T")
    if beta > 0:
        rb = math.sqrt(beta)
        if alpha < -rb:
            raise ProfileBranchError("alpha < -sqrt(beta): explosive regime")
        ch, sh = np.cosh(rb * s), np.sinh(rb * s)
        A = rb * (alpha * ch + rb * sh) / (rb * ch + alpha * sh)
        B = 2 * rb / ((rb - alpha) * np.exp(-rb * s) + (rb + alpha) * np.exp(rb * s))
        return A, B
    if beta == 0:
        if alpha < 0:
            raise ProfileBranchError("beta = 0 branch needs alpha >= 0")
        A = alpha / (1 + alpha * s)
        B = 1.0 / (1 + alpha * s)
        return A, B
    rb = math.sqrt(-beta)
    if alpha != 0:
        raise ProfileBranchError("beta < 0 branch needs alpha = 0")
    if np.any(rb * s >= math.pi / 2):
        raise ProfileBranchError("beta < 0 solution past its explosion time")
    return -rb * np.tan(rb * s), 1.0 / np.cos(rb * s)


@dataclass
class LinearHyperbolicProfile(ProfileFn):
    alpha: float
    beta: float
    L: float
    sigma_bar: float = 1.0
    T: float = 1.0
    kind = "linear_hyperbolic"
    time_dependent = True

    def _AB(self, t):
        return _linear_hyperbolic_AB(self.alpha, self.beta, self.T, t)

    def value(self, t, r, e=None):
        r = np.asarray(r, dtype=float)
        A, B = self._AB(t)
        return A * r - B * profile_hL(self.L, self.sigma_bar, B * r)

    def d_r(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        A, B = self._AB(t)
        if self.L == 0:
            return A * np.ones_like(r)
        c = math.sqrt(self.L) / (2 * self.sigma_bar)
        return A - B ** 2 * self.L / np.cosh(c * B * r) ** 2

    def d_rr(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        A, B = self._AB(t)
        if self.L == 0:
            return np.zeros_like(r)
        c = math.sqrt(self.L) / (2 * self.sigma_bar)
        z = c * B * r
        return B ** 3 * (self.L ** 1.5 / self.sigma_bar) * np.tanh(z) / np.cosh(z) ** 2

    def d_t(self, t, r, e=None, **kw):
        # dA/dt = A^2 - beta and dB/dt = A B give the exact time derivative.
        r = np.asarray(r, dtype=float)
        A, B = self._AB(t)
        Adot = A ** 2 - self.beta
        Bdot = A * B
        hl = profile_hL(self.L, self.sigma_bar, B * r)
        if self.L == 0:
            hlp = np.zeros_like(r)
        else:
            c = math.sqrt(self.L) / (2 * self.sigma_bar)
            hlp = self.L / np.cosh(c * B * r) ** 2
        return Adot * r - Bdot * (hl + B * r * hlp)

    def terminal_profile(self) -> SumProfile:
        return SumProfile([
            LinearProfile(self.alpha),
            HLProfile(self.L, self.sigma_bar, coeff=-1.0),
        ])


def profile_linear_hyperbolic(alpha, beta, L, sigma_bar, T, t, r):
    return LinearHyperbolicProfile(alpha, beta, L, sigma_bar, T).value(t, r)


# ---------------------------------------------------------------------------
# Stationary profile for kappa(r) = a - b/r: parabola p tangent to the line
# f0(r) = sqrt(a) r - b/sqrt(a) at tau, concatenated and C^2-smoothed on
# [tau/2, 3 tau/2] by mollifying the curvature jump with a quintic weight.
# ---------------------------------------------------------------------------

def _lip_params(a: float, b: float):
    tau = min(2 * b / a, 2 * math.sqrt(a) / b, 2 * a ** 1.5 / b)
    alpha_tau = 2 * b / (math.sqrt(a) * tau ** 2)
    beta_tau = math.sqrt(a) - 2 * b / (math.sqrt(a) * tau)
    return tau, alpha_tau, beta_tau


def concatenation_params(a: float, b: float) -> dict:
    """Raw (un-inflated) tau / parabola coefficients and the floor."""
    if a <= 0 or b < 0:
        raise ValueError("need a > 0 and b >= 0")
    if b == 0:
        return {"tau": 0.0, "alpha_tau": 0.0, "beta_tau": math.sqrt(a),
                "floor": math.sqrt(a)}
    tau, al, be = _lip_params(a, b)
    floor = min(0.0, math.sqrt(a) - b ** 2 / a, math.sqrt(a) - b ** 2 / a ** 2)
    return {"tau": tau, "alpha_tau": al, "beta_tau": be, "floor": floor}


def _w5(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (10 - 15 * u + 6 * u ** 2)


def _w5_int1(u):
    # int_0^u w5
    u = np.asarray(u, dtype=float)
    inside = u ** 4 * (2.5 - 3 * u + u ** 2)
    out = np.where(u < 0, 0.0, np.where(u > 1, 0.5 + (u - 1), inside))
    return out


def _w5_int2(u):
    # int_0^u int_0^v w5
    u = np.asarray(u, dtype=float)
    inside = u ** 5 * (0.5 - 0.5 * u + u ** 2 / 7)
    top = (0.5 - 0.5 + 1 / 7) + 0.5 * (u - 1) + 0.5 * (u - 1) ** 2
    return np.where(u < 0, 0.0, np.where(u > 1, top, inside))


@dataclass
class StationaryLipProfile(ProfileFn):
    """C^2 stationary profile certifying kappa(r) >= a - b/r at sigma_bar=1.

    Built with b inflated by 5 percent so the smoothed object keeps a
    strict margin in 2 f'' - f f' + a r - b >= 0 against the stated b.
    """

    a: float
    b: float
    inflate: float = 1.05
    kind = "stationary_lip"
    sigma_bar = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b < 0:
            raise ValueError("need a > 0 and b >= 0")
        self.b_eff = self.b * self.inflate
        if self.b == 0:
            self.tau = 0.0
            self.alpha_tau = 0.0
            self.beta_tau = math.sqrt(self.a)
        else:
            self.tau, self.alpha_tau, self.beta_tau = _lip_params(self.a, self.b_eff)

    def _pieces(self, r):
        r = np.asarray(r, dtype=float)
        if self.b == 0:
            return math.sqrt(self.a) * r
        tau, al, be = self.tau, self.alpha_tau, self.beta_tau
        p = 0.5 * al * r ** 2 + be * r
        u = (r - tau / 2) / tau
        return p - al * tau ** 2 * _w5_int2(u)

    def value(self, t, r, e=None):
        return self._pieces(r)

    def d_r(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if self.b == 0:
            return np.full_like(r, math.sqrt(self.a))
        tau, al, be = self.tau, self.alpha_tau, self.beta_tau
        u = (r - tau / 2) / tau
        return al * r + be - al * tau * _w5_int1(u)

    def d_rr(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if self.b == 0:
            return np.zeros_like(r)
        tau, al = self.tau, self.alpha_tau
        u = (r - tau / 2) / tau
        return al * (1 - np.where(u < 0, 0.0, _w5(u)))

    def antiderivative(self, r):
        # numeric cumulative integral; accurate enough for terminal weights
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        for i, ri in np.ndenumerate(r):
            xs = np.linspace(0.0, ri, 257)
            out[i] = np.trapz(self._pieces(xs), xs)
        return out

    @property
    def floor(self) -> float:
        """liminf_{r->0} f(r)/r of the smoothed object."""
        return self.beta_tau if self.b > 0 else math.sqrt(self.a)

    def kappa(self):
        return lambda r: self.a - self.b / np.asarray(r, dtype=float)


def stationary_profile_lip(a: float, b: float, r):
    return StationaryLipProfile(a, b).value(0.0, r)


# ---------------------------------------------------------------------------
# Residual report
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    tgrid: np.ndarray
    rgrid: np.ndarray
    residual: np.ndarray
    min_residual: float
    argmin: tuple
    egrid: Optional[np.ndarray] = None

    def passed(self, tol: float) -> bool:
        return bool(self.min_residual >= -tol)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))


def _normalize_kappa(kappa) -> Callable:
    """Accept a constant or a callable of r / (t, r) / (r, e) / (t, r, e)."""
    if kappa is None:
        return lambda t, r, e=None: np.zeros_like(np.asarray(r, dtype=float))
    if np.isscalar(kappa):
        k = float(kappa)
        return lambda t, r, e=None: np.full_like(np.asarray(r, dtype=float), k)
    import inspect

    sig = inspect.signature(kappa)
    npos = len([p for p in sig.parameters.values()
                if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)])
    names = list(sig.parameters)
    if npos == 1:
        return lambda t, r, e=None: kappa(r)
    if npos == 2 and names[0] in ("t", "time"):
        return lambda t, r, e=None: kappa(t, r)
    if npos == 2:
        return lambda t, r, e=None: kappa(r, e)
    return lambda t, r, e=None: kappa(t, r, e)


def profile_residual(f: ProfileFn, kappa_lb, sigma_bar: float,
                     tgrid, rgrid, egrid=None,
                     stationary: Optional[bool] = None) -> ResidualReport:
    """LHS - RHS of the profile inequality on a (t, r[, e]) grid.

    residual = d_t f + 2 sigma^2 d_rr f - f d_r f + r kappa - (4r)^-1 |grad_e f|_perp^2
    """
    kap = _normalize_kappa(kappa_lb)
    tgrid = np.atleast_1d(np.asarray(tgrid, dtype=float))
    rgrid = np.asarray(rgrid, dtype=float)
    if np.any(rgrid <= 0):
        raise ValueError("rgrid must be positive")
    if stationary is None:
        stationary = not f.time_dependent
    es = [None] if egrid is None else list(egrid)
    out = np.empty((tgrid.size, rgrid.size, len(es)))
    for i, t in enumerate(tgrid):
        for j, e in enumerate(es):
            val = f.value(t, rgrid, e)
            dr = f.d_r(t, rgrid, e)
            drr = f.d_rr(t, rgrid, e)
            dt = 0.0 if stationary else f.d_t(t, rgrid, e)
            res = dt + 2 * sigma_bar ** 2 * drr - val * dr + rgrid * kap(t, rgrid, e)
            if e is not None:
                res = res - f.angular_sq(t, rgrid, e) / (4 * rgrid)
            if not np.all(np.isfinite(res)):
                raise FloatingPointError("non-finite residual (singular profile point)")
            out[i, :, j] = res
    if egrid is None:
        out = out[:, :, 0]
    k = np.unravel_index(np.argmin(out), out.shape)
    loc = (float(tgrid[k[0]]), float(rgrid[k[1]])) + (() if egrid is None else (k[2],))
    return ResidualReport(tgrid, rgrid, out, float(out[k]), loc,
                          egrid=None if egrid is None else np.asarray(egrid))


# ---------------------------------------------------------------------------
# Constructive asymptotic profile (controlled Riccati blow-up assembly)
# ---------------------------------------------------------------------------

@dataclass
class _OdeNodes:
    s: np.ndarray
    g: np.ndarray
    gp: np.ndarray


class AsymptoticProfile(ProfileFn):
    """Piecewise profile with asymptotic slope sqrt(alpha - eps).

    Pieces over r (sigma_bar = 1 construction):
      [0, r_q]           quadratic tail of the blow-up
      [r_q, r_plus]      reversed Riccati ODE solution (dense nodes)
      [r_plus, r_plus+d] C^2 connector onto the linear part
      beyond             sqrt(alpha-eps) (r - r_plus) + negative offset
    """

    kind = "concatenated"
    sigma_bar = 1.0

    def __init__(self, alpha, eps, K, r_minus, r_plus, nodes: _OdeNodes,
                 s_hat_minus, s_hat_plus, quad_coeffs, kappa_eps, delta_out):
        self.alpha, self.eps, self.K = alpha, eps, K
        self.r_minus, self.r_plus = r_minus, r_plus
        self.nodes = nodes
        self.s_hat_minus, self.s_hat_plus = s_hat_minus, s_hat_plus
        self.quad = quad_coeffs  # (g0, g1, g2) at s_hat_plus
        self.kappa_eps = kappa_eps
        self.delta_out = delta_out
        self.slope = math.sqrt(alpha - eps)
        c = 0.5 * r_plus * (alpha - eps)
        self._c_out = c
        self._offset = -c * delta_out ** 2 / 12.0
        self.r_q = r_plus - s_hat_plus

    # connector q(x), x = r - r_plus in [0, delta]: q'' = -c phi(x/d),
    # phi(u) = (1-u)(1-3u) has phi(0)=1, phi(1)=0, int phi = 0, phi >= -1/3.
    def _q(self, x, order=0):
        d, c = self.delta_out, self._c_out
        u = np.clip(x / d, 0.0, 1.0)
        if order == 2:
            return -c * (1 - u) * (1 - 3 * u)
        if order == 1:
            return -c * d * (u - 2 * u ** 2 + u ** 3)
        return -c * d * d * (u ** 2 / 2 - 2 * u ** 3 / 3 + u ** 4 / 4)

    def _eval(self, r, order):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.empty_like(r)
        s = self.r_plus - r

        in_quad = s >= self.s_hat_plus
        in_ode = (s < self.s_hat_plus) & (s >= 0)
        in_conn = (r > self.r_plus) & (r <= self.r_plus + self.delta_out)
        in_lin = r > self.r_plus + self.delta_out

        if np.any(in_quad):
            g0, g1, g2 = self.quad
            ds = s[in_quad] - self.s_hat_plus
            if order == 0:
                out[in_quad] = g0 + g1 * ds + 0.5 * g2 * ds ** 2
            elif order == 1:
                out[in_quad] = -(g1 + g2 * ds)  # d/dr = -d/ds
            else:
                out[in_quad] = g2
        if np.any(in_ode):
            g, gp = self._interp_nodes(s[in_ode])
            if order == 0:
                out[in_ode] = g
            elif order == 1:
                out[in_ode] = -gp
            else:
                # g'' = -(g g' + m(s))/2 along the ODE
                out[in_ode] = -0.5 * g * gp - 0.5 * self._forcing(s[in_ode])
        if np.any(in_conn):
            x = r[in_conn] - self.r_plus
            base = (self.slope * x, np.full_like(x, self.slope), np.zeros_like(x))[order]
            out[in_conn] = base + self._q(x, order)
        if np.any(in_lin):
            x = r[in_lin] - self.r_plus
            if order == 0:
                out[in_lin] = self.slope * x + self._offset
            elif order == 1:
                out[in_lin] = self.slope
            else:
                out[in_lin] = 0.0
        return float(out[0]) if scalar else out

    def _interp_nodes(self, s):
        """Cubic Hermite on stored (g, g') ODE nodes."""
        nd = self.nodes
        idx = np.clip(np.searchsorted(nd.s, s) - 1, 0, nd.s.size - 2)
        s0, s1 = nd.s[idx], nd.s[idx + 1]
        h = s1 - s0
        u = np.where(h > 0, (s - s0) / np.where(h > 0, h, 1.0), 0.0)
        g0, g1 = nd.g[idx], nd.g[idx + 1]
        d0, d1 = nd.gp[idx], nd.gp[idx + 1]
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u ** 2 * (3 - 2 * u)
        h11 = u ** 2 * (u - 1)
        g = h00 * g0 + h10 * h * d0 + h01 * g1 + h11 * h * d1
        dh00 = 6 * u * (u - 1) / np.where(h > 0, h, 1.0)
        dh10 = (1 - 4 * u + 3 * u ** 2)
        dh01 = -6 * u * (u - 1) / np.where(h > 0, h, 1.0)
        dh11 = (3 * u ** 2 - 2 * u)
        gp = dh00 * g0 + dh10 * d0 + dh01 * g1 + dh11 * d1
        return g, gp

    def _forcing(self, s):
        """m(s) = (r_plus - s) kappa_eps(r_plus - s)."""
        return self.kappa_eps(self.r_plus - np.asarray(s, dtype=float)) * (self.r_plus - np.asarray(s, dtype=float))

    def value(self, t, r, e=None):
        return self._eval(r, 0)

    def d_r(self, t, r, e=None, **kw):
        return self._eval(r, 1)

    def d_rr(self, t, r, e=None, **kw):
        return self._eval(r, 2)

    def check_grid(self) -> np.ndarray:
        """Representative radii covering all pieces."""
        nd = self.nodes.s
        rs = np.concatenate([
            np.linspace(1e-3, self.r_q, 80, endpoint=False),
            np.sort(self.r_plus - nd[nd <= self.s_hat_plus]),
            np.linspace(self.r_plus, self.r_plus + self.delta_out, 40),
            np.linspace(self.r_plus + self.delta_out, 3 * self.r_plus, 40),
        ])
        return np.unique(rs[rs > 0])


def construct_asymptotic_profile(kappa_lb: Callable, alpha: float, eps: float,
                                 K: float, residual_tol: float = 1e-8) -> AsymptoticProfile:
    """Build a stationary profile with asymptotic slope sqrt(alpha - eps).

    kappa_lb must reach (and may exceed) alpha - eps from some radius on and
    satisfy r * kappa_lb(r) >= -K; the builder works with the capped lower
    bound min(kappa_lb, alpha - eps) and certifies the result against
    kappa_lb itself before returning.
    """
    if not 0 < eps < alpha:
        raise ValueError("need 0 < eps < alpha")
    target = alpha - eps
    rs_scan = np.concatenate([np.linspace(1e-4, 1.0, 200), np.linspace(1.0, 2000.0, 4000)])
    kvals = np.asarray(kappa_lb(rs_scan), dtype=float)
    if np.any(rs_scan * kvals < -K - 1e-9):
        raise ProfileConstructionError("kappa_lb violates its declared floor -K/r")
    reach = np.where(kvals >= target - 1e-12)[0]
    if reach.size == 0:
        raise ProfileConstructionError("kappa_lb never reaches alpha - eps on the scan range")
    r_minus = max(float(rs_scan[reach[0]]), 1.0)

    root = math.sqrt(target)
    r_plus = r_minus + math.pi / target ** 0.25 + 1.0
    if r_plus > 100.0:
        raise ProfileConstructionError("r_plus too large for the fixed-width strip construction")
    M = 100.0 * (1.0 + math.sqrt(alpha))

    def rhs_main(s, g):
        return -root - 0.25 * g * g - 0.25 * target * (2 * s * r_plus - s * s)

    # Step 2: integrate to the controlled blow-up (RK4, adaptive sub-steps).
    h_base = 1e-4 * r_plus
    s_list, g_list, gp_list = [0.0], [0.0], [rhs_main(0.0, 0.0)]
    s, g = 0.0, 0.0
    s_cap = r_plus - r_minus
    while not (g <= -M and rhs_main(s, g) <= -M):
        if s >= s_cap:
            raise ProfileConstructionError(
                "blow-up magnitude not reached before r_plus - r_minus; increase r_plus")
        h = h_base
        while abs(rhs_main(s, g)) * h > 0.05 * max(1.0, abs(g)):
            h /= 2
        k1 = rhs_main(s, g)
        k2 = rhs_main(s + h / 2, g + h / 2 * k1)
        k3 = rhs_main(s + h / 2, g + h / 2 * k2)
        k4 = rhs_main(s + h, g + h * k3)
        g = g + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s = s + h
        s_list.append(s)
        g_list.append(g)
        gp_list.append(rhs_main(s, g))
    s_hat_minus = s

    # Step 3: forcing strip, width capped by the remaining Riccati room.
    width = min(1e-2 * r_plus, 1.0 / abs(g))
    s_hat_plus = s_hat_minus + width
    if r_plus - s_hat_plus < r_minus:
        raise ProfileConstructionError("strip would leave the constant-kappa region")
    A_line = lambda sv: target * (r_plus - sv)

    def m_of_s(sv):
        sv = np.asarray(sv, dtype=float)
        u = (sv - s_hat_minus) / width
        w = _w5(u)
        before = A_line(sv)
        out = np.where(sv <= s_hat_minus, before,
                       np.where(sv >= s_hat_plus, -K, (1 - w) * before + w * (-K)))
        return out

    # integral of m over [0, s]: exact on the constant part, Simpson on strip
    def m_int(sv):
        base = target * (r_plus * min(sv, s_hat_minus) - min(sv, s_hat_minus) ** 2 / 2)
        if sv <= s_hat_minus:
            return base
        xs = np.linspace(s_hat_minus, min(sv, s_hat_plus), 41)
        strip = np.trapz(m_of_s(xs), xs)
        tail = -K * max(0.0, sv - s_hat_plus)
        return base + strip + tail

    def rhs_strip(sv, gv):
        return -root - 0.25 * gv * gv - 0.5 * m_int(sv)

    n_strip = 400
    hs = width / n_strip
    for _ in range(n_strip):
        k1 = rhs_strip(s, g)
        k2 = rhs_strip(s + hs / 2, g + hs / 2 * k1)
        k3 = rhs_strip(s + hs / 2, g + hs / 2 * k2)
        k4 = rhs_strip(s + hs, g + hs * k3)
        g = g + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s = s + hs
        s_list.append(s)
        g_list.append(g)
        gp_list.append(rhs_strip(s, g))
    if not (g <= -M and gp_list[-1] <= -M):
        raise ProfileConstructionError("blow-up magnitudes lost across the strip")

    g0, g1 = g, gp_list[-1]
    g2 = -0.5 * g0 * g1 + 0.5 * K
    if g2 >= 0:
        raise ProfileConstructionError("quadratic extension needs g'' < 0; increase M")

    def kappa_eps(r):
        r = np.asarray(r, dtype=float)
        sv = r_plus - r
        m = np.where(sv <= 0, target * r, m_of_s(np.clip(sv, 0.0, None)))
        m = np.where(sv > s_hat_plus, -K, m)
        return m / np.where(r > 0, r, 1.0)

    nodes = _OdeNodes(np.asarray(s_list), np.asarray(g_list), np.asarray(gp_list))
    prof = AsymptoticProfile(alpha, eps, K, r_minus, r_plus, nodes,
                             s_hat_minus, s_hat_plus, (g0, g1, g2),
                             kappa_eps, delta_out=1e-2 * r_plus)
    rep = profile_residual(prof, kappa_lb, sigma_bar=1.0,
                           tgrid=[0.0], rgrid=prof.check_grid(), stationary=True)
    if not rep.passed(residual_tol):
        raise ProfileConstructionError(
            f"constructed profile fails its own residual check: min {rep.min_residual:.3e}")
    prof.check_report = rep
    return prof


# ---------------------------------------------------------------------------
# Grid-backed profile
# ---------------------------------------------------------------------------

class GridProfile(ProfileFn):
    """Profile backed by values on a (t, r) lattice via spline interpolation."""

    kind = "grid"

    def __init__(self, tgrid, rgrid, values, sigma_bar: float = 1.0):
        self.tgrid = np.atleast_1d(np.asarray(tgrid, dtype=float))
        self.rgrid = np.asarray(rgrid, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (self.tgrid.size, self.rgrid.size):
            raise ValueError("values must have shape (nt, nr)")
        self.sigma_bar = sigma_bar
        self.time_dependent = self.tgrid.size > 1
        if self.tgrid.size >= 4:
            self._sp = RectBivariateSpline(self.tgrid, self.rgrid, values, kx=3, ky=5 if self.rgrid.size > 5 else 3)
            self._sp1d = None
        else:
            from scipy.interpolate import CubicSpline
            self._sp = None
            self._sp1d = [CubicSpline(self.rgrid, values[i]) for i in range(self.tgrid.size)]
        self.values = values

    def _row(self, t):
        i = int(np.argmin(np.abs(self.tgrid - t)))
        if abs(self.tgrid[i] - t) > 1e-9 and self._sp is None:
            raise ValueError("grid profile evaluated off its t-grid")
        return i

    def value(self, t, r, e=None):
        r = np.asarray(r, dtype=float)
        if self._sp is not None:
            return self._sp.ev(np.full_like(r, t), r)
        return self._sp1d[self._row(t)](r)

    def d_r(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if self._sp is not None:
            return self._sp.ev(np.full_like(r, t), r, dy=1)
        return self._sp1d[self._row(t)](r, 1)

    def d_rr(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if self._sp is not None:
            return self._sp.ev(np.full_like(r, t), r, dy=2)
        return self._sp1d[self._row(t)](r, 2)

    def d_t(self, t, r, e=None, **kw):
        r = np.asarray(r, dtype=float)
        if not self.time_dependent:
            return np.zeros_like(r)
        if self._sp is not None:
            return self._sp.ev(np.full_like(r, t), r, dx=1)
        raise ValueError("too few t-slices for a time derivative")

    @property
    def f_at_zero(self) -> float:
        return float(self.value(self.tgrid[0], self.rgrid[0]))


# ---------------------------------------------------------------------------
# Anisotropic quadratic (matrix Riccati) profile
# ---------------------------------------------------------------------------

class RiccatiBlowupError(RuntimeError):
    def __init__(self, t_blow):
        super().__init__(f"matrix Riccati path blew up at t = {t_blow:.6g}")
        self.t_blow = t_blow


def riccati_anisotropic(kappa_path: Callable, Sigma_T, tgrid) -> "RiccatiQuadraticProfile":
    """Integrate dSigma/dt = Sigma Sigma^T - kappa_t backward from Sigma_T."""
    tgrid = np.asarray(tgrid, dtype=float)
    if tgrid.ndim != 1 or tgrid.size < 2 or np.any(np.diff(tgrid) <= 0):
        raise ValueError("tgrid must be increasing")
    Sigma_T = np.asarray(Sigma_T, dtype=float)
    if not np.allclose(Sigma_T, Sigma_T.T, atol=1e-12):
        raise ValueError("Sigma_T must be symmetric")
    d = Sigma_T.shape[0]
    path = np.empty((tgrid.size, d, d))
    path[-1] = Sigma_T
    asym_time = None

    def rhs(t, S):
        return S @ S.T - np.asarray(kappa_path(t), dtype=float)

    S = Sigma_T.copy()
    nsub = 8
    for i in range(tgrid.size - 1, 0, -1):
        h = -(tgrid[i] - tgrid[i - 1]) / nsub
        t = tgrid[i]
        for _ in range(nsub):
            k1 = rhs(t, S)
            k2 = rhs(t + h / 2, S + h / 2 * k1)
            k3 = rhs(t + h / 2, S + h / 2 * k2)
            k4 = rhs(t + h, S + h * k3)
            S = S + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t + h
            if not np.all(np.isfinite(S)) or np.max(np.abs(S)) > 1e8:
                raise RiccatiBlowupError(t)
        if asym_time is None and np.max(np.abs(S - S.T)) > 1e-10:
            asym_time = float(tgrid[i - 1])
        path[i - 1] = S
    return RiccatiQuadraticProfile(tgrid, path, asymmetry_time=asym_time)


class RiccatiQuadraticProfile(ProfileFn):
    """f(t, r, e) = r <e, Sigma_t e> for a stored matrix path."""

    kind = "riccati_quadratic"
    time_dependent = True

    def __init__(self, tgrid, path, asymmetry_time=None):
        self.tgrid = np.asarray(tgrid, dtype=float)
        self.path = np.asarray(path, dtype=float)
        self.asymmetry_time = asymmetry_time

    def Sigma(self, t):
        i = np.searchsorted(self.tgrid, t)
        i = min(max(i, 1), self.tgrid.size - 1)
        t0, t1 = self.tgrid[i - 1], self.tgrid[i]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1 - w) * self.path[i - 1] + w * self.path[i]

    def value(self, t, r, e=None):
        S = self.Sigma(t)
        e = np.asarray(e, dtype=float)
        return np.asarray(r, dtype=float) * float(e @ S @ e)

    def d_r(self, t, r, e=None, **kw):
        S = self.Sigma(t)
        e = np.asarray(e, dtype=float)
        return np.full_like(np.asarray(r, dtype=float), float(e @ S @ e))

    def d_rr(self, t, r, e=None, **kw):
        return np.zeros_like(np.asarray(r, dtype=float))

    def d_t(self, t, r, e=None, h=1e-6, **kw):
        S1 = self.Sigma(min(t + h, self.tgrid[-1]))
        S0 = self.Sigma(max(t - h, self.tgrid[0]))
        e = np.asarray(e, dtype=float)
        return np.asarray(r, dtype=float) * float(e @ (S1 - S0) @ e) / (2 * h)

    def angular_sq(self, t, r, e=None):
        S = self.Sigma(t)
        e = np.asarray(e, dtype=float)
        v = 2 * S @ e
        v_perp = v - (v @ e) * e
        return (np.asarray(r, dtype=float) ** 2) * float(v_perp @ v_perp)

    def max_deviation_from(self, ref) -> float:
        ref = np.asarray(ref, dtype=float)
        return float(np.max(np.abs(self.path - ref)))

"""Cole-Hopf solution of the profile PDE.

The profile equation

    d_t f + 2 sigma^2 d_rr f = f d_r f - r kappa_t(r),   f_t(0) = 0,

linearises through f_t = -4 sigma^2 d_r log F_t, where F solves

    d_t F + 2 sigma^2 d_rr F - (4 sigma^2)^-1 K_t F = 0,
    F_T(r) = exp[-(4 sigma^2)^-1 int_0^r f_T],  F'(0) = 0,

with K_t(r) = int_0^r kappa_t(u) u du.  For kappa = 0 the solution is an
even-reflection Gaussian convolution of the terminal weight; for
kappa = beta >= 0 constant it is the same convolution against an
Ornstein-Uhlenbeck transition kernel after removing the sqrt(beta) r
linear part.  A Crank-Nicolson branch covers general kappa, and a
counter-seeded Monte Carlo branch estimates single values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_banded

from .profiles import GridProfile, ProfileFn, _normalize_kappa
from .rng import step_normals

__all__ = [
    "ColeHopfInput", "colehopf_F", "profile_from_F", "ou_representation_F",
    "monte_carlo_F", "derived_profile", "ColeHopfError",
]

_METHODS = ("quadrature_kappa0", "ou_beta", "pde", "monte_carlo")


class ColeHopfError(RuntimeError):
    pass


@dataclass
class ColeHopfInput:
    fT: ProfileFn
    kappa: object  # scalar or callable, normalised on use
    sigma_bar: float
    T: float
    method: str = "quadrature_kappa0"

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.sigma_bar <= 0 or self.T <= 0:
            raise ValueError("need sigma_bar > 0 and T > 0")
        self._kap = _normalize_kappa(self.kappa)
        self._check_admissible()

    def _check_admissible(self):
        # integrable negative part near 0 and sub-quadratic growth of fT
        u = np.linspace(1e-6, 1.0, 400)
        neg = np.minimum(self.fT.value(self.T, u), 0.0)
        if not np.isfinite(np.trapz(neg, u)):
            raise ColeHopfError("terminal profile too negative near 0")
        rs = np.linspace(1.0, 100.0, 60)
        vals = np.abs(self.fT.value(self.T, rs)) + 1e-12
        slope = np.polyfit(np.log(rs), np.log(vals), 1)[0]
        if slope >= 2.0:
            raise ColeHopfError(f"terminal profile growth exponent {slope:.2f} >= 2")

    def weight_exponent(self, x):
        """int_0^x fT(u) du via the profile's antiderivative when it has one."""
        x = np.asarray(x, dtype=float)
        try:
            return self.fT.antiderivative(x)
        except NotImplementedError:
            out = np.empty_like(x)
            for i, xi in np.ndenumerate(x):
                out[i] = quad(lambda u: float(self.fT.value(self.T, u)), 0.0, xi,
                              epsabs=1e-12, limit=200)[0]
            return out

    def terminal_weight(self, x):
        s2 = 4 * self.sigma_bar ** 2
        return np.exp(-self.weight_exponent(np.abs(np.asarray(x, dtype=float))) / s2)

    def K(self, t, r):
        """int_0^r kappa_t(u) u du by Simpson on a fixed fine grid."""
        r = float(r)
        if r == 0:
            return 0.0
        u = np.linspace(0.0, r, 201)
        ku = self._kap(t, np.maximum(u, 1e-12)) * u
        return float(np.trapz(ku, u))


def _gauss_kernel_pair(x, r, var):
    a = np.exp(-(x - r) ** 2 / (2 * var))
    b = np.exp(-(x + r) ** 2 / (2 * var))
    return a + b, a - b


def _quadrature_F_and_dF(inp: ColeHopfInput, t: float, r: float):
    """kappa == 0 closed quadrature with even reflection; returns (F, dF/dr)."""
    var = 4 * inp.sigma_bar ** 2 * (inp.T - t)
    upper = r + 12 * inp.sigma_bar * math.sqrt(2 * (inp.T - t)) + 5.0

    def integrand_F(x):
        w = float(inp.terminal_weight(x))
        k, _ = _gauss_kernel_pair(x, r, var)
        return w * k

    def integrand_dF(x):
        w = float(inp.terminal_weight(x))
        a = math.exp(-(x - r) ** 2 / (2 * var))
        b = math.exp(-(x + r) ** 2 / (2 * var))
        return w * ((x - r) / var * a - (x + r) / var * b)

    norm = 1.0 / math.sqrt(2 * math.pi * var)
    F = quad(integrand_F, 0.0, upper, epsabs=1e-12, epsrel=1e-11, limit=400)[0]
    dF = quad(integrand_dF, 0.0, upper, epsabs=1e-12, epsrel=1e-11, limit=400)[0]
    return norm * F, norm * dF


def colehopf_F(inp: ColeHopfInput, t: float, rgrid) -> dict:
    """F_t on rgrid; strictly positive, with a Richardson error estimate.

    Returns {"r", "F", "dF", "t", "err"}; dF present for quadrature.
    """
    rgrid = np.asarray(rgrid, dtype=float)
    if np.any(rgrid < 0):
        raise ValueError("rgrid must be nonnegative")
    if t > inp.T:
        raise ValueError("need t <= T")
    if inp.T - t < 1e-12:
        F = inp.terminal_weight(rgrid)
        return {"r": rgrid, "F": F, "dF": None, "t": t, "err": 0.0}

    if inp.method == "quadrature_kappa0":
        F = np.empty_like(rgrid)
        dF = np.empty_like(rgrid)
        for i, r in enumerate(rgrid):
            F[i], dF[i] = _quadrature_F_and_dF(inp, t, float(r))
        err = 1e-10
    elif inp.method == "pde":
        F, err, dF = _pde_F(inp, t, rgrid)
    elif inp.method == "ou_beta":
        raise ValueError("use ou_representation_F for the OU branch")
    else:
        raise ValueError("monte_carlo estimates single values; use monte_carlo_F")
    if np.any(F <= 0):
        raise ColeHopfError("F lost positivity")
    return {"r": rgrid, "F": F, "dF": dF, "t": t, "err": err}


def _pde_F(inp: ColeHopfInput, t: float, rgrid, n: int = 8001, nsteps: int = 600):
    """Crank-Nicolson for F on [0, R]: Neumann at 0, frozen Dirichlet at R."""

    kap = inp._kap

    def cumK(tau, x):
        ku = kap(tau, np.maximum(x, 1e-12)) * x
        out = np.concatenate([[0.0], np.cumsum((ku[1:] + ku[:-1]) / 2 * np.diff(x))])
        return out

    def solve(n, nsteps):
        R = 20.0 * float(np.max(rgrid))
        x = np.linspace(0.0, R, n)
        h = x[1] - x[0]
        diff = 2 * inp.sigma_bar ** 2
        FT = inp.terminal_weight(x)
        dt = (inp.T - t) / nsteps
        F = FT.copy()
        lam = diff * dt / (2 * h * h)
        time_dep = not np.isscalar(inp.kappa)
        c = cumK(inp.T, x) / (4 * inp.sigma_bar ** 2)
        for step in range(nsteps):
            if time_dep:
                tau = inp.T - (step + 0.5) * dt
                c = cumK(tau, x) / (4 * inp.sigma_bar ** 2)
            # (I - dt/2 L) F_new = (I + dt/2 L) F_old, L = diff d_rr - c
            rhs = F * (1 - 2 * lam - dt / 2 * c)
            rhs[1:-1] += lam * (F[2:] + F[:-2])
            rhs[0] += 2 * lam * F[1]
            ab = np.zeros((3, n))
            ab[0, 1:] = -lam
            ab[1, :] = 1 + 2 * lam + dt / 2 * c
            ab[2, :-1] = -lam
            # Neumann at 0 (ghost F[-1] = F[1]), frozen Dirichlet at R
            ab[0, 1] = -2 * lam
            ab[1, -1] = 1.0
            ab[0, -1] = 0.0
            rhs[-1] = FT[-1]
            F = solve_banded((1, 1), ab, rhs)
        return x, F

    x1, F1 = solve(n, nsteps)
    x2, F2 = solve(2 * n - 1, 2 * nsteps)
    out1 = np.interp(rgrid, x1, F1)
    out2 = np.interp(rgrid, x2, F2)
    err = float(np.max(np.abs(out2 - out1) / np.maximum(np.abs(out2), 1e-300)))
    # log-derivative on the solver grid (even extension at 0), then interpolate
    h2 = x2[1] - x2[0]
    m = x2.size
    logF = np.log(np.maximum(F2, 1e-280))  # reaction-killed tail may underflow
    ext = np.concatenate([logF[4:0:-1], logF])
    core = (ext[:-4] - 8 * ext[1:-3] + 8 * ext[3:-1] - ext[4:]) / (12 * h2)
    ld = core[2:]  # d(logF)/dr at solver indices 0 .. m-3
    dF = np.interp(rgrid, x2[:m - 2], F2[:m - 2] * ld)
    return out2, err, dF


def derived_profile(inp: ColeHopfInput, t: float, rgrid) -> np.ndarray:
    """f_t = -4 sigma^2 d_r log F_t on rgrid."""
    rgrid = np.asarray(rgrid, dtype=float)
    if inp.T - t < 1e-12:
        return np.asarray(inp.fT.value(inp.T, rgrid), dtype=float)
    s2 = 4 * inp.sigma_bar ** 2
    sol = colehopf_F(inp, t, rgrid)
    if sol["dF"] is not None:
        return -s2 * sol["dF"] / sol["F"]
    return -s2 * _log_deriv(rgrid, sol["F"])


def _log_deriv(r, F):
    logF = np.log(F)
    h = r[1] - r[0]
    out = np.empty_like(logF)
    out[2:-2] = (logF[:-4] - 8 * logF[1:-3] + 8 * logF[3:-1] - logF[4:]) / (12 * h)
    out[0] = (-3 * logF[0] + 4 * logF[1] - logF[2]) / (2 * h)
    out[1] = (logF[2] - logF[0]) / (2 * h)
    out[-2] = (logF[-1] - logF[-3]) / (2 * h)
    out[-1] = (3 * logF[-1] - 4 * logF[-2] + logF[-3]) / (2 * h)
    return out


def profile_from_F(rgrid, F, sigma_bar: float, tgrid=None) -> GridProfile:
    """Grid-backed profile from positive F samples (single time slice)."""
    F = np.asarray(F, dtype=float)
    if np.any(F <= 1e-300):
        raise ColeHopfError("F touches zero; log-derivative undefined")
    f = -4 * sigma_bar ** 2 * _log_deriv(np.asarray(rgrid, dtype=float), F)
    prof = GridProfile([0.0], rgrid, f[None, :], sigma_bar=sigma_bar)
    prof.f_at_zero_plus = float(f[0])
    return prof


def ou_representation_F(fT: ProfileFn, beta: float, sigma_bar: float,
                        t: float, T: float, rgrid) -> dict:
    """H_t and the derived profile via the OU transition density.

    H_t(r) = int exp[-(4s^2)^-1 int_0^|x| (fT - sqrt(beta) u)] q_{T-t}(x, r) dx,
    f_t(r) = sqrt(beta) r - 4 s^2 d_r log H_t(r).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    rgrid = np.asarray(rgrid, dtype=float)
    s2 = 4 * sigma_bar ** 2
    rb = math.sqrt(beta)
    dt = T - t
    if dt < 1e-12:
        raise ValueError("need t < T")
    if beta == 0:
        mean_of = lambda r: r
        var = s2 * dt
    else:
        decay = math.exp(-rb * dt)
        mean_of = lambda r: r * decay
        var = (2 * sigma_bar ** 2 / rb) * (1 - math.exp(-2 * rb * dt))

    def weight(x):
        return math.exp(-(float(fT.antiderivative(x)) - rb * x * x / 2) / s2)

    H = np.empty_like(rgrid)
    dH = np.empty_like(rgrid)
    upper = float(np.max(rgrid)) + 12 * math.sqrt(var) + 5.0
    for i, r in enumerate(rgrid):
        m = mean_of(float(r))
        dm = m / r if r != 0 else (math.exp(-rb * dt) if beta > 0 else 1.0)

        def f_int(x):
            a = math.exp(-(x - m) ** 2 / (2 * var))
            b = math.exp(-(x + m) ** 2 / (2 * var))
            return weight(x) * (a + b)

        def df_int(x):
            a = math.exp(-(x - m) ** 2 / (2 * var))
            b = math.exp(-(x + m) ** 2 / (2 * var))
            return weight(x) * ((x - m) / var * a - (x + m) / var * b) * dm

        H[i] = quad(f_int, 0.0, upper, epsabs=1e-12, epsrel=1e-11, limit=400)[0]
        dH[i] = quad(df_int, 0.0, upper, epsabs=1e-12, epsrel=1e-11, limit=400)[0]
    if np.any(H <= 0):
        raise ColeHopfError("H lost positivity")
    f = rb * rgrid - s2 * dH / H
    return {"r": rgrid, "H": H, "dH": dH, "f": f, "t": t}


def monte_carlo_F(inp: ColeHopfInput, t: float, r: float, n_paths: int,
                  seed: int, nsteps: int = 64) -> tuple:
    """Unbiased estimate of F_t(r) with CLT standard error.

    Path i uses slots [i] of counter-derived per-step normal tables, so the
    estimate is bit-identical under any slot-preserving schedule.
    """
    if n_paths < 100:
        raise ValueError("need n_paths >= 100")
    dt = inp.T - t
    s2 = 4 * inp.sigma_bar ** 2
    kap_is_zero = np.isscalar(inp.kappa) and float(inp.kappa) == 0.0
    if kap_is_zero:
        z = step_normals(seed, 0, n_paths)
        xT = r + 2 * inp.sigma_bar * math.sqrt(dt) * z
        w = np.exp(-inp.weight_exponent(np.abs(xT)) / s2)
    else:
        h = dt / nsteps
        x = np.full(n_paths, float(r))
        itime = np.zeros(n_paths)
        for step in range(nsteps):
            tau = t + step * h
            Kv = _K_vec(inp, tau, np.abs(x))
            itime += Kv * h
            x = x + 2 * inp.sigma_bar * math.sqrt(h) * step_normals(seed, step, n_paths)
        w = np.exp(-(itime + inp.weight_exponent(np.abs(x))) / s2)
    if not np.all(np.isfinite(w)):
        raise ColeHopfError("Monte Carlo weight overflow")
    est = float(np.mean(w))
    se = float(np.std(w, ddof=1) / math.sqrt(n_paths))
    return est, se


def _K_vec(inp: ColeHopfInput, tau: float, rs: np.ndarray) -> np.ndarray:
    grid = np.linspace(0.0, float(np.max(rs)) + 1e-9, 257)
    ku = inp._kap(tau, np.maximum(grid, 1e-12)) * grid
    cum = np.concatenate([[0.0], np.cumsum((ku[1:] + ku[:-1]) / 2 * np.diff(grid))])
    return np.interp(rs, grid, cum)

"""Gap-weight pairs: Fourier profiles with compact support in [-gamma, gamma].

Every profile is stored through the scaled function

    g(x) = (1 - w_hat(gamma x)) / x**2,     x = xi / gamma in [0, 1],

which is smooth and keeps ``W_hat(xi) = (1 - w_hat(xi)) / (i xi) = -i x g(x) / gamma``
accurate for tiny energy differences, where the naive quotient cancels.

Profiles
--------
``autocorr``  normalized autocorrelation of a smooth bump of half-width 1/2.
              Its inverse transform is a square, so ``w(t) >= 0`` and
              ``||w||_1 = w_hat(0) = 1``; F is then a contraction.
``bump``      ``exp(1 - 1/(1 - x^2))``; its inverse transform changes sign.
``table``     user samples of ``w_hat`` on a uniform grid of [0, 1].
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

PANELS = 48
PANEL_DEG = 28
GL_NODES = 400


def _bump(y: np.ndarray) -> np.ndarray:
    """exp(-1/(1 - 4 y^2)) on |y| < 1/2, zero outside."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = np.abs(y) < 0.5
    out[m] = np.exp(-1.0 / (1.0 - 4.0 * y[m] ** 2))
    return out


def _bump_d1(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = np.abs(y) < 0.5
    u = 1.0 - 4.0 * y[m] ** 2
    out[m] = np.exp(-1.0 / u) * (-8.0 * y[m] / u ** 2)
    return out


def _bump_d2(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = np.abs(y) < 0.5
    yy = y[m]
    u = 1.0 - 4.0 * yy ** 2
    f1 = -8.0 * yy / u ** 2
    df1 = -8.0 / u ** 2 - 128.0 * yy ** 2 / u ** 3
    out[m] = np.exp(-1.0 / u) * (f1 ** 2 + df1)
    return out


_GL = np.polynomial.legendre.leggauss(GL_NODES)


def _gl(f, a: float, b: float) -> float:
    x, w = _GL
    xm, xr = 0.5 * (a + b), 0.5 * (b - a)
    return float(xr * np.dot(w, f(xm + xr * x)))


class _AutocorrG:
    """g(x) for the autocorrelation profile, exact quadrature at arbitrary x."""

    def __init__(self):
        self.N0 = _gl(lambda y: _bump(y) ** 2, -0.5, 0.5)
        self.N2 = _gl(lambda y: _bump_d1(y) ** 2, -0.5, 0.5)
        self.N4 = _gl(lambda y: _bump_d2(y) ** 2, -0.5, 0.5)

    def __call__(self, x: float) -> float:
        x = abs(float(x))
        if x >= 1.0:
            return 1.0 / (x * x)
        if x < 2e-4:
            # 1 - w_hat(x) = (x^2/2) N2/N0 - (x^4/24) N4/N0 + O(x^6)
            return 0.5 * self.N2 / self.N0 - x * x * self.N4 / (24.0 * self.N0)
        # 1 - w_hat = (1/2) int (b(y) - b(y - x))^2 dy / N0, no cancellation in the integrand
        a, b = -0.5, 0.5 + x
        # split at the support edges so each panel sees a smooth integrand
        cuts = sorted({a, min(x - 0.5, 0.5), max(x - 0.5, -0.5), 0.5, b})
        tot = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi > lo:
                tot += _gl(lambda y: (_bump(y) - _bump(y - x)) ** 2, lo, hi)
        return 0.5 * tot / self.N0 / (x * x)


def _chebyshev_panels(func, panels: int, deg: int):
    edges = np.linspace(0.0, 1.0, panels + 1)
    coeffs = np.empty((panels, deg + 1))
    k = np.arange(deg + 1)
    nodes = np.cos(np.pi * (k + 0.5) / (deg + 1))  # first-kind Chebyshev points on [-1, 1]
    for p in range(panels):
        lo, hi = edges[p], edges[p + 1]
        xs = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
        vals = np.array([func(v) for v in xs])
        coeffs[p] = np.polynomial.chebyshev.chebfit(nodes, vals, deg)
    return edges, coeffs


def _clenshaw(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate per-point Chebyshev series; coeffs has shape (n_points, deg+1)."""
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    for j in range(coeffs.shape[1] - 1, 0, -1):
        b1, b2 = coeffs[:, j] + 2.0 * t * b1 - b2, b1
    return coeffs[:, 0] + t * b1 - b2


@dataclass(eq=False)
class GapWeightPair:
    gamma: float
    profile: str = "autocorr"
    table: tuple = ()
    _g: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.profile == "autocorr":
            self._g = _shared_autocorr()
        elif self.profile == "bump":
            self._g = None
        elif self.profile == "table":
            vals = np.asarray(self.table, dtype=float)
            if vals.ndim != 1 or len(vals) < 4:
                raise ValueError("table profile needs at least 4 samples on [0, 1]")
            if abs(vals[0] - 1.0) > 1e-12 or abs(vals[-1]) > 1e-12:
                raise ValueError("table profile must satisfy w_hat(0) = 1 and w_hat(gamma) = 0")
            xs = np.linspace(0.0, 1.0, len(vals))
            spline = CubicSpline(xs, vals, bc_type=((1, 0.0), "not-a-knot"))
            c2 = float(spline(0.0, 2))
            self._g = ("table", spline, c2)
        else:
            raise ValueError(f"unknown weight profile {self.profile!r}")

    def describe(self) -> dict:
        d = {"gamma": self.gamma, "profile": self.profile}
        if self.profile == "table":
            d["table"] = list(self.table)
        return d

    def g_scaled(self, x) -> np.ndarray:
        x = np.abs(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        outside = x >= 1.0
        out[outside] = 1.0 / x[outside] ** 2
        inside = ~outside
        xi = x[inside]
        if self.profile == "autocorr":
            edges, coeffs = self._g
            p = np.minimum((xi * (len(edges) - 1)).astype(int), len(edges) - 2)
            lo, hi = edges[p], edges[p + 1]
            t = (2.0 * xi - lo - hi) / (hi - lo)
            out[inside] = _clenshaw(coeffs[p], t)
        elif self.profile == "bump":
            small = xi < 1e-8
            u = np.where(small, 0.5, xi)
            r = u * u / (1.0 - u * u)
            gv = -np.expm1(-r) / (u * u)
            out[inside] = np.where(small, 1.0, gv)
        else:
            _, spline, c2 = self._g
            small = xi < 1e-3
            u = np.where(small, 1.0, xi)
            gv = (1.0 - spline(u)) / (u * u)
            out[inside] = np.where(small, -0.5 * c2, gv)
        return out

    def w_hat(self, xi) -> np.ndarray:
        x = np.asarray(xi, dtype=float) / self.gamma
        out = 1.0 - x * x * self.g_scaled(x)
        out = np.where(np.abs(x) >= 1.0, 0.0, out)
        return out

    def W_hat(self, xi) -> np.ndarray:
        """(1 - w_hat(xi)) / (i xi), zero at xi = 0."""
        x = np.asarray(xi, dtype=float) / self.gamma
        return -1j * x * self.g_scaled(x) / self.gamma

    # time domain, used for reporting and as a test oracle only
    def time_weight(self, t, nodes: int = 4000) -> np.ndarray:
        """w(t) = (1/pi) int_0^gamma w_hat(xi) cos(t xi) d xi (w_hat is real and even)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        xg, wg = _leggauss(nodes)
        xi = 0.5 * self.gamma * (xg + 1.0)
        wts = 0.5 * self.gamma * wg * self.w_hat(xi)
        return (np.cos(np.outer(t, xi)) @ wts) / math.pi

    def norms(self, t_max: float | None = None, n_t: int = 20001) -> dict:
        """||w||_1, ||W||_1 and ||t W||_1 by trapezoid sums on [0, t_max]."""
        t_max = t_max or 400.0 / self.gamma
        t = np.linspace(0.0, t_max, n_t)
        w = self.time_weight(t)
        dt = t[1] - t[0]
        # W(t) = int_t^inf w for t > 0, via cumulative trapezoid from the far end
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * dt)])
        W = 0.5 - cum
        trap = lambda f: float(dt * (f.sum() - 0.5 * (f[0] + f[-1])))
        return {"w_L1": 2 * trap(np.abs(w)), "W_L1": 2 * trap(np.abs(W)),
                "tW_L1": 2 * trap(np.abs(t * W)), "w_min": float(w.min()), "t_max": t_max,
                "empirical": True}


@functools.lru_cache(maxsize=4)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


_AUTOCORR = None


def _shared_autocorr():
    global _AUTOCORR
    if _AUTOCORR is None:
        _AUTOCORR = _chebyshev_panels(_AutocorrG(), PANELS, PANEL_DEG)
    return _AUTOCORR


def autocorr_reference(x: float) -> float:
    """Direct quadrature of g(x) for the autocorrelation profile (no interpolation)."""
    return _AutocorrG()(x)

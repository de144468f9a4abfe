"""Decay functions, F-function certificates, interaction norms and moment sums.

Only the stretched-exponential family ``scale * (1+r)^-zeta * exp(-a r^theta)``
carries rigorous tail bounds; every other decay function yields partial sums
tagged as empirical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .lattice import LatticeGraph


class DecayError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFunction:
    family: str  # "stretched_exp" | "table" | "custom" | "zero"
    zeta: float = 0.0
    a: float = 0.0
    theta: float = 1.0
    scale: float = 1.0
    values: tuple[float, ...] = ()
    tail: str = "unknown"  # tables: "zero" when the function vanishes past the table
    fn: Callable[[float], float] | None = field(default=None, compare=False)

    @classmethod
    def stretched_exp(cls, zeta: float = 0.0, a: float = 0.0, theta: float = 1.0,
                      scale: float = 1.0) -> "DecayFunction":
        if a < 0 or not 0 < theta <= 1 or scale < 0:
            raise DecayError("need a >= 0, theta in (0, 1], scale >= 0")
        return cls("stretched_exp", zeta=float(zeta), a=float(a), theta=float(theta), scale=float(scale))

    @classmethod
    def table(cls, values: Sequence[float], tail: str = "unknown") -> "DecayFunction":
        vals = tuple(float(v) for v in values)
        if any(v < 0 for v in vals):
            raise DecayError("decay tables must be non-negative")
        return cls("table", values=vals, tail=tail)

    @classmethod
    def zero(cls) -> "DecayFunction":
        return cls("zero", tail="zero")

    @classmethod
    def custom(cls, fn: Callable[[float], float]) -> "DecayFunction":
        return cls("custom", fn=fn)

    @property
    def analytic_tail(self) -> bool:
        return self.family in ("stretched_exp", "zero") or (self.family == "table" and self.tail == "zero")

    def __call__(self, r):
        r_arr = np.asarray(r, dtype=float)
        if self.family == "zero":
            out = np.zeros_like(r_arr)
        elif self.family == "stretched_exp":
            out = self.scale * (1.0 + r_arr) ** (-self.zeta) * np.exp(-self.a * r_arr ** self.theta)
        elif self.family == "table":
            idx = np.floor(r_arr).astype(int)
            vals = np.asarray(self.values + (0.0,))
            beyond = idx >= len(self.values)
            if self.tail != "zero" and np.any(beyond):
                # unknown continuation: hold the last value (monotone upper guess)
                last = self.values[-1] if self.values else 0.0
                vals[-1] = last
            out = vals[np.clip(idx, 0, len(self.values))]
        else:
            out = np.vectorize(lambda t: float(self.fn(t)))(r_arr)
        return float(out) if np.ndim(r) == 0 else out

    def describe(self) -> dict:
        d = {"family": self.family}
        if self.family == "stretched_exp":
            d.update(zeta=self.zeta, a=self.a, theta=self.theta, scale=self.scale)
        elif self.family == "table":
            d.update(values=list(self.values), tail=self.tail)
        return d

    def check_monotone(self, horizon: int) -> bool:
        v = np.atleast_1d(self(np.arange(horizon + 1)))
        return bool(np.all(np.diff(v) <= 1e-15 * (1 + np.abs(v[:-1]))))


@dataclass
class FFunctionCertificate:
    decay: DecayFunction
    uniform_sum: float
    convolution_constant: float
    moments: dict  # mu -> list of suffix sums over the realized distance range
    certifiable: bool = True
    note: str = ""


def certify_f_function(graph: LatticeGraph, g: DecayFunction, mus: Sequence[float] = (0.0, 1.0)) -> FFunctionCertificate:
    d = graph.dist
    gd = np.asarray(g(d), dtype=float).reshape(d.shape)
    if np.any(gd <= 0):
        return FFunctionCertificate(g, math.nan, math.nan, {}, False, "decay function vanishes at a realized distance")
    uniform = max(math.fsum(row) for row in gd)
    # C = max_{x,y} sum_z g(d(x,z)) g(d(z,y)) / g(d(x,y))
    conv = gd @ gd
    C = float(np.max(conv / gd))
    dmax = graph.diameter
    vals = np.atleast_1d(g(np.arange(dmax + 1)))
    moments = {}
    for mu in mus:
        terms = [(n + 1) ** mu * vals[n] for n in range(dmax + 1)]
        moments[float(mu)] = [math.fsum(terms[r:]) for r in range(dmax + 1)]
    return FFunctionCertificate(g, uniform, C, moments)


def interaction_f_norm(terms: dict, F: DecayFunction, graph: LatticeGraph) -> float:
    """sup_{x,y} F(d(x,y))^-1 sum_{X containing x,y} ||Phi(X)||, X = supports of anchored terms.

    ``terms`` maps (z, n) -> object with ``.support`` and ``.norm()``.
    """
    if not terms:
        return 0.0
    acc = np.zeros((graph.n_sites, graph.n_sites))
    parts: dict[tuple[int, int], list[float]] = {}
    for key in sorted(terms):
        op = terms[key]
        nrm = op.norm()
        if nrm == 0:
            continue
        s = sorted(op.support)
        for x in s:
            for y in s:
                parts.setdefault((x, y), []).append(nrm)
    for (x, y), vals in parts.items():
        acc[x, y] = math.fsum(vals)
    Fd = np.asarray(F(graph.dist), dtype=float).reshape(graph.dist.shape)
    mask = acc > 0
    if np.any(Fd[mask] <= 0):
        raise DecayError("F vanishes at a distance carrying interaction weight")
    if not np.any(mask):
        return 0.0
    return float(np.max(acc[mask] / Fd[mask]))


def _power_exp_tail(coef: float, p: float, b: float, th: float, N: int) -> float:
    """Rigorous bound on sum_{n>=N} coef * n^p * exp(-b n^th) for b > 0, N >= 1."""
    nstar = (p / (b * th)) ** (1.0 / th) if p > 0 else 0.0
    start = max(N, int(math.ceil(nstar)) + 1)
    head = math.fsum(coef * n ** p * math.exp(-b * n ** th) for n in range(N, start))
    # the summand is non-increasing past nstar, so the sum is below the integral from start-1
    s = (p + 1.0) / th
    x0 = b * (start - 1.0) ** th
    log_int = special.gammaln(s) + math.log(max(special.gammaincc(s, x0), 1e-300)) - math.log(th) - s * math.log(b)
    return float(head + coef * math.exp(log_int))


def _stretched_tail(F: DecayFunction, mu: float, eps: float, N: int) -> float | None:
    """Rigorous bound on sum_{n >= N} (n+1)^mu F(eps n) for the stretched family."""
    if F.scale == 0:
        return 0.0
    if mu < 0 or N < 1:
        return None
    if F.a > 0:
        # (n+1)^mu <= 2^mu n^mu, (1 + eps n)^-zeta <= 1 or <= 2^|zeta| n^|zeta|
        zneg = max(0.0, -F.zeta)
        coef = F.scale * 2.0 ** (mu + zneg)
        return _power_exp_tail(coef, mu + zneg, F.a * eps ** F.theta, F.theta, N)
    # (1 + eps n)^-zeta <= eps^-zeta (n+1)^-zeta for zeta >= 0
    q = F.zeta - mu
    if F.zeta < 0 or q <= 1:
        return math.inf
    return float(F.scale * eps ** (-F.zeta) * N ** (1 - q) / (q - 1))


@dataclass
class MomentTable:
    partial: list  # r -> sum_{n=r}^{N} (n+1)^mu F(eps n)
    tail: float | None  # rigorous bound on the part beyond N, None if unknown
    horizon: int
    flag: str  # "exact" | "rigorous" | "unbounded-tail"

    def total(self, r: int = 0) -> tuple[float, float]:
        """Interval [lower, upper] for M(r)."""
        lo = self.partial[r] if r <= self.horizon else 0.0
        hi = lo + (self.tail if self.tail is not None else math.inf)
        return lo, hi


def moment(F: DecayFunction, mu: float, eps: float = 1.0, horizon: int = 200) -> MomentTable:
    if not 0 < eps <= 1:
        raise DecayError("eps must lie in (0, 1]")
    n = np.arange(horizon + 1)
    vals = np.atleast_1d(F(eps * n))
    terms = [(k + 1) ** mu * float(vals[k]) for k in range(horizon + 1)]
    suffix = [0.0] * (horizon + 2)
    for r in range(horizon, -1, -1):
        suffix[r] = math.fsum(terms[r:])
    partial = suffix[: horizon + 1]
    if F.family == "zero":
        return MomentTable(partial, 0.0, horizon, "exact")
    if F.family == "table" and F.tail == "zero" and eps * (horizon + 1) >= len(F.values):
        return MomentTable(partial, 0.0, horizon, "exact")
    if F.family == "stretched_exp":
        t = _stretched_tail(F, mu, eps, horizon + 1)
        if t is not None and math.isfinite(t):
            return MomentTable(partial, t, horizon, "rigorous")
    return MomentTable(partial, None, horizon, "unbounded-tail")


@dataclass
class MomentCheck:
    verdict: str  # "pass" | "fail" | "indeterminate"
    partial_sum: float
    tail: float | None
    exponent: float
    trace: list  # cumulative partial sums at a few checkpoints
    reason: str = ""

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "partial_sum": self.partial_sum, "tail": self.tail,
                "exponent": self.exponent, "trace": self.trace, "reason": self.reason}


def ltqo_moment_check(G0: DecayFunction, zeta: float, alpha: float, nu: float,
                      horizon: int = 400) -> MomentCheck:
    """Summability of n^(zeta+alpha+nu/2) sqrt(G0(n)) over n >= 1."""
    p = zeta + alpha + nu / 2.0
    n = np.arange(1, horizon + 1)
    g = np.atleast_1d(G0(n)).astype(float)
    terms = n ** p * np.sqrt(np.maximum(g, 0.0))
    cums = np.cumsum(terms)  # trace only; the reported sum below is compensated
    total = math.fsum(terms.tolist())
    checkpoints = sorted({1, 2, 5, 10, 20, 50, 100, 200, horizon} & set(range(1, horizon + 1)))
    trace = [[int(k), float(cums[k - 1])] for k in checkpoints]
    if G0.family == "zero" or not np.any(g > 0) and G0.analytic_tail:
        return MomentCheck("pass", 0.0, 0.0, p, trace, "G0 vanishes identically")
    if G0.family == "table" and G0.tail == "zero" and len(G0.values) <= horizon + 1:
        return MomentCheck("pass", total, 0.0, p, trace, "finite support")
    if G0.family == "stretched_exp":
        # sqrt(G0) = sqrt(scale) (1+n)^(-zeta/2) exp(-(a/2) n^theta)
        zh = G0.zeta / 2.0
        coef = math.sqrt(G0.scale)
        if G0.a > 0:
            zneg = max(0.0, -zh)
            tail = _power_exp_tail(coef * 2.0 ** zneg, p + zneg, G0.a / 2.0, G0.theta, horizon + 1)
            return MomentCheck("pass", total, tail, p, trace, "stretched-exponential tail")
        q = zh - p
        if q > 1:
            tail = coef * (horizon + 1) ** (1 - q) / (q - 1)
            return MomentCheck("pass", total, float(tail), p, trace, "power-law tail summable")
        return MomentCheck("fail", total, math.inf, p, trace,
                           f"terms ~ n^{-q:.3g} are not summable")
    return MomentCheck("indeterminate", total, None, p, trace, "no closed-form tail")

"""Local indistinguishability of ground states.

For a ball M = b_x(m), a sub-ball K = b_x(k) and an observable A on K, the
deviation ``||P_M A P_M - omega(A) P_M||`` equals ``||V^* (A x 1) V - omega(A)||``
with V an isometry onto ker H_M.  Writing the kernel basis with the K factor
split off, ``V^* (A x 1) V = sum_ab A_ab T[a, b]`` where the r x r blocks T[a, b]
are formed once per (x, k, m).

Two numbers are recorded per grid point: the largest deviation over a probe set
(a lower bound on the supremum over ||A|| <= 1) and a certified upper bound from
``|X_pq| <= ||A|| ||N_pq||_1`` and ``||X|| <= ||X||_F``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decay import DecayFunction, MomentCheck, ltqo_moment_check
from .lattice import ball
from .models import FrustrationFreeModel, kernel_basis
from .operators import config_offsets, lanczos_norm

MONOTONE_TOL = 1e-12


class AmbiguousReferenceError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeSpec:
    basis: str = "full"  # "full": Hermitian matrix units while the count fits under basis_cap
    samples: int = 64
    seed: int = 0
    basis_cap: int = 1 << 16

    def __post_init__(self):
        if self.basis not in ("full", "random"):
            raise ValueError("probe basis must be 'full' or 'random'")

    def describe(self) -> dict:
        return {"basis": self.basis, "samples": self.samples, "seed": self.seed,
                "basis_cap": self.basis_cap}


def reference_state(model: FrustrationFreeModel, reference: np.ndarray | None = None) -> np.ndarray:
    """Ambient ground state, or a normalized copy of a declared reference vector."""
    amb = model.ambient.sites
    if reference is not None:
        v = np.asarray(reference, dtype=complex).ravel()
        if v.shape[0] != model.ambient.dim:
            raise ValueError("reference vector has the wrong dimension")
        return v / np.linalg.norm(v)
    V, _ = kernel_basis(model, amb)
    if V.shape[1] != 1:
        raise AmbiguousReferenceError(
            f"ambient kernel has dimension {V.shape[1]}; declare a reference vector")
    return V[:, 0]


def _split(vec: np.ndarray, sub, full, dims) -> np.ndarray:
    """Reshape columns indexed by ``full`` to (rest, sub, ...)."""
    rest = [y for y in full if y not in set(sub)]
    idx = config_offsets(rest, full, dims)[:, None] + config_offsets(sub, full, dims)[None, :]
    return vec[idx]


@dataclass
class _Blocks:
    Vt: np.ndarray  # (d_rest, d_K, r)
    Om: np.ndarray  # (d_rest_ambient, d_K)
    rho: np.ndarray  # rho[a, b] = omega(|a><b|)

    @property
    def dK(self) -> int:
        return self.Vt.shape[1]

    @property
    def r(self) -> int:
        return self.Vt.shape[2]

    def compress(self, A: np.ndarray) -> np.ndarray:
        """V^* (A x 1) V as an r x r matrix."""
        W = np.einsum("ab,Rbq->Raq", A, self.Vt)
        return np.einsum("Rap,Raq->pq", self.Vt.conj(), W)

    def omega(self, A: np.ndarray) -> complex:
        return complex(np.sum(A * self.rho))


def _blocks(model: FrustrationFreeModel, x: int, k: int, m: int, omega: np.ndarray) -> _Blocks:
    g = model.graph
    dims = model.ambient.site_dims
    K = tuple(sorted(ball(g, x, k)))
    M = tuple(sorted(ball(g, x, m)))
    V, _ = kernel_basis(model, M)
    Vt = _split(V, K, M, dims)
    Om = _split(omega, K, model.ambient.sites, dims)
    rho = Om.conj().T @ Om
    return _Blocks(Vt, Om, rho)


def _hermitian_sign(L: np.ndarray, R: np.ndarray) -> np.ndarray:
    """sign(N) for a Hermitian N = L R, computed on the range of L and R^*."""
    Q, _ = np.linalg.qr(np.hstack([L, R.conj().T]))
    small = (Q.conj().T @ L) @ (R @ Q)
    w, U = np.linalg.eigh(0.5 * (small + small.conj().T))
    S = (U * np.sign(w)[None, :]) @ U.conj().T
    return Q @ S @ Q.conj().T


def _diag_factors(B: "_Blocks", p: int) -> tuple[np.ndarray, np.ndarray]:
    Vp = B.Vt[:, :, p]
    return np.hstack([Vp.conj().T, -B.Om.conj().T]), np.vstack([Vp, B.Om])


def _aligned_probes(B: _Blocks) -> list:
    # sign(N_pp) maximizes Tr(A N_pp^T) = X_pp; N_pp^T = conj(N_pp) for Hermitian N_pp
    return [_hermitian_sign(*_diag_factors(B, p)).conj() for p in range(B.r)]


def _probe_values(B: _Blocks, probes: ProbeSpec, rng_key: tuple, extra: list | None = None) -> float:
    """max over the probe set of ||V^*(A x 1)V - omega(A)||, probes with ||A|| = 1.

    The set always contains sign(N_pp) for each kernel index p, which attains
    the largest diagonal entry; for a one-dimensional local kernel this is the
    exact supremum.  ``extra`` replaces those aligned probes, so that a row of
    the grid can share one probe set.
    """
    dK, r = B.dK, B.r
    eye = np.eye(r)

    def dev(A):
        X = B.compress(A) - B.omega(A) * eye
        return float(np.abs(np.linalg.eigvalsh(0.5 * (X + X.conj().T))).max())

    worst = max(dev(A) for A in (_aligned_probes(B) if extra is None else extra))
    if probes.basis == "full" and dK * dK <= probes.basis_cap:
        T = np.einsum("Rap,Rbq->abpq", B.Vt.conj(), B.Vt)
        N = T - B.rho[:, :, None, None] * eye  # N[a, b] = block of |a><b|
        iu, ju = np.triu_indices(dK, 1)
        stacks = [N[np.arange(dK), np.arange(dK)],
                  N[iu, ju] + N[ju, iu],
                  1j * (N[iu, ju] - N[ju, iu])]
        for S in stacks:
            if len(S):
                w = np.linalg.eigvalsh(S)
                worst = max(worst, float(np.abs(w).max()))
        return worst
    rng = np.random.default_rng([probes.seed, *rng_key])
    for _ in range(probes.samples):
        if dK <= 512:
            G = rng.standard_normal((dK, dK)) + 1j * rng.standard_normal((dK, dK))
            A = G + G.conj().T
            A /= np.abs(np.linalg.eigvalsh(A)).max()
        else:
            # rank-limited: Haar-random eigenvectors, eigenvalues in [-1, 1] with one at +-1
            Q, _ = np.linalg.qr(rng.standard_normal((dK, 8)) + 1j * rng.standard_normal((dK, 8)))
            lam = rng.uniform(-1.0, 1.0, 8)
            lam[0] = np.sign(lam[0]) or 1.0
            A = (Q * lam[None, :]) @ Q.conj().T
        worst = max(worst, dev(A))
    return worst


def _trace_norm_lowrank(L: np.ndarray, R: np.ndarray) -> float:
    """||L R||_1 without forming L R when the inner dimension is small."""
    if L.shape[1] >= min(L.shape[0], R.shape[1]):
        return float(np.linalg.svd(L @ R, compute_uv=False).sum())
    _, R1 = np.linalg.qr(L)
    _, R2 = np.linalg.qr(R.conj().T)
    return float(np.linalg.svd(R1 @ R2.conj().T, compute_uv=False).sum())


def _upper_bound(B: _Blocks) -> float:
    """sqrt(sum_pq ||N_pq||_1^2) with N_pq = V_p^* V_q - delta_pq rho (d_K x d_K)."""
    tot = 0.0
    for p in range(B.r):
        Vp = B.Vt[:, :, p]
        for q in range(B.r):
            Vq = B.Vt[:, :, q]
            if p == q:
                L, R = _diag_factors(B, p)
            else:
                L, R = Vp.conj().T, Vq
            tot += _trace_norm_lowrank(L, R) ** 2
    return math.sqrt(tot)


def ltqo_deviation(model: FrustrationFreeModel, x: int, k: int, m: int,
                   reference: np.ndarray | None = None, probes: ProbeSpec = ProbeSpec(),
                   certified: bool = False) -> float:
    """Normalized deviation D(x, k, m); the probe maximum, or the certified upper bound."""
    if not 0 <= k <= m:
        raise ValueError("need 0 <= k <= m")
    omega = reference_state(model, reference)
    B = _blocks(model, x, k, m, omega)
    val = _upper_bound(B) if certified else _probe_values(B, probes, (x, k))
    return val / (1 + k) ** model.graph.nu


def ball_is_clipped(graph, x: int, m: int) -> bool:
    """True when b_x(m) reaches past an open boundary or wraps onto itself on a periodic axis."""
    for c, L, per in zip(graph.coords[x], graph.dims, graph.periodic):
        if per:
            if 2 * m + 1 > L:
                return True
        elif c - m < 0 or c + m > L - 1:
            return True
    return False


@dataclass
class LtqoEstimate:
    lower: dict  # (x, k, m) -> probe maximum
    upper: dict  # (x, k, m) -> certified bound
    excluded: list  # (x, m) pairs left out of the grid
    probes: dict
    monotone_violations: list
    fit: "G0Fit | None" = None

    def by_distance(self, which: str = "upper") -> dict:
        tab = self.upper if which == "upper" else self.lower
        out: dict = {}
        for (x, k, m), v in tab.items():
            out[m - k] = max(out.get(m - k, 0.0), v)
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        key = lambda t: f"{t[0]},{t[1]},{t[2]}"
        return {"lower": {key(t): v for t, v in sorted(self.lower.items())},
                "upper": {key(t): v for t, v in sorted(self.upper.items())},
                "lower_by_distance": {str(r): v for r, v in self.by_distance("lower").items()},
                "upper_by_distance": {str(r): v for r, v in self.by_distance("upper").items()},
                "excluded": [list(p) for p in self.excluded], "probes": self.probes,
                "lower_is": "probe lower bound on the supremum",
                "monotone_violations": [list(v) for v in self.monotone_violations],
                "fit": self.fit.to_dict() if self.fit else None, "empirical": True}


def ltqo_table(model: FrustrationFreeModel, sites=None, m_max: int | None = None,
               reference: np.ndarray | None = None, probes: ProbeSpec = ProbeSpec(),
               exclude_clipped: bool = True) -> LtqoEstimate:
    g = model.graph
    omega = reference_state(model, reference)
    sites = range(g.n_sites) if sites is None else sites
    nu = g.nu
    lower, upper, excluded, viol = {}, {}, [], []
    for x in sites:
        top = g.eccentricity(x) if m_max is None else min(m_max, g.eccentricity(x))
        ms = []
        for m in range(top + 1):
            if exclude_clipped and ball_is_clipped(g, x, m):
                excluded.append((x, m))
            else:
                ms.append(m)
        for k in range(top + 1):
            row = [m for m in ms if m >= k]
            blocks = {m: _blocks(model, x, k, m, omega) for m in row}
            shared = [A for m in row for A in _aligned_probes(blocks[m])]
            norm = (1 + k) ** nu
            for m in row:
                lower[(x, k, m)] = _probe_values(blocks[m], probes, (x, k), shared) / norm
                upper[(x, k, m)] = _upper_bound(blocks[m]) / norm
        for k in range(top + 1):
            row = [(m, lower[(x, k, m)]) for m in ms if m >= k]
            for (m0, a), (m1, b) in zip(row, row[1:]):
                if b > a + MONOTONE_TOL:
                    viol.append((x, k, m1, b - a))
    return LtqoEstimate(lower, upper, excluded, probes.describe(), viol)


@dataclass
class G0Fit:
    raw: dict  # r -> value
    envelope: dict  # r -> running max over r' >= r
    flagged: bool  # raw table was not already non-increasing
    q: float | None
    c: float | None
    decay: DecayFunction
    moment: MomentCheck | None = None

    def envelope_function(self) -> DecayFunction:
        if not self.envelope or max(self.envelope.values()) == 0.0:
            return DecayFunction.zero()
        r_max = max(self.envelope)
        return DecayFunction.table([self.envelope.get(r, 0.0) for r in range(r_max + 1)])

    def to_dict(self) -> dict:
        return {"raw": {str(r): v for r, v in self.raw.items()},
                "envelope": {str(r): v for r, v in self.envelope.items()},
                "flagged_non_monotone": self.flagged, "q": self.q, "c": self.c,
                "decay": self.decay.describe(),
                "moment": self.moment.to_dict() if self.moment else None, "empirical": True}


def fit_G0(table: dict, zeta: float | None = None, alpha: float | None = None,
           nu: float | None = None, zero_tol: float = 1e-13) -> G0Fit:
    """Monotone envelope plus a conservative exponential c e^{-q r} above it."""
    raw = {int(r): float(v) for r, v in sorted(table.items())}
    if not raw or max(raw) < 3:
        raise ValueError("the table must cover r = 0..r_max with r_max >= 3")
    env: dict = {}
    run = 0.0
    for r in sorted(raw, reverse=True):
        run = max(run, raw[r])
        env[r] = run
    env = dict(sorted(env.items()))
    flagged = any(env[r] > raw[r] for r in raw)
    pos = [(r, v) for r, v in env.items() if v > zero_tol]
    if not pos:
        decay, q, c = DecayFunction.zero(), None, 0.0
    elif len(pos) == 1:
        decay, q, c = DecayFunction.table([env[r] if env[r] > zero_tol else 0.0 for r in range(max(env) + 1)]), None, None
    else:
        rs, vs = np.array(pos, dtype=float).T
        q = float(-np.polyfit(rs, np.log(vs), 1)[0])
        if q > 0:
            c = float(max(v * math.exp(q * r) for r, v in pos))
            decay = DecayFunction.stretched_exp(zeta=0.0, a=q, theta=1.0, scale=c)
        else:
            c = None
            decay = DecayFunction.table([env[r] for r in range(max(env) + 1)])
    fit = G0Fit(raw, env, flagged, q, c, decay)
    if zeta is not None and alpha is not None and nu is not None:
        fit.moment = ltqo_moment_check(decay, zeta, alpha, nu)
    return fit


def indistinguishability_check(model: FrustrationFreeModel, x: int, k: int, m: int, n: int,
                               envelope, reference: np.ndarray | None = None,
                               probes: ProbeSpec = ProbeSpec(basis="random", samples=32)) -> float:
    """Worst slack of | ||A P_n|| - ||A Omega|| | <= ||A|| sqrt((1+m)^nu G(n-m)) over random A on b_x(m).

    ``envelope`` maps a distance r to the operative deviation envelope.  Non-positive
    return values mean the inequality held for every probe.
    """
    if not 0 <= k <= m <= n:
        raise ValueError("need 0 <= k <= m <= n")
    g = model.graph
    omega = reference_state(model, reference)
    B = _blocks(model, x, m, n, omega)
    rhs_scale = math.sqrt((1 + m) ** g.nu * float(envelope(n - m)))
    rng = np.random.default_rng([probes.seed, x, k, m, n])
    dK = B.dK
    worst = -math.inf
    for _ in range(probes.samples):
        A = rng.standard_normal((dK, dK)) + 1j * rng.standard_normal((dK, dK))
        A /= math.sqrt(lanczos_norm(A.conj().T @ A, tol=1e-10)) if dK > 512 else np.linalg.norm(A, 2)
        AA = A.conj().T @ A
        X = B.compress(AA)
        left = math.sqrt(max(float(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[-1]), 0.0))
        right = math.sqrt(max(B.omega(AA).real, 0.0))
        worst = max(worst, abs(left - right) - rhs_scale)
    return worst

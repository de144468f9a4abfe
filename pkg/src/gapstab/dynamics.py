"""Heisenberg dynamics in the eigenbasis, Lieb-Robinson profiles,
interaction-picture unitaries and the weighted integral operators F, G.

Convention: tau_t(A) = e^{itH} A e^{-itH} and w_hat(xi) = int e^{it xi} w(t) dt, so
in the eigenbasis (F(A))_{jk} = w_hat(E_j - E_k) A_{jk}.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import ball
from .models import FrustrationFreeModel, assemble_hamiltonian
from .operators import LocalOperator, embed, operator_norm, site_operator
from .spectral import SpectralData, diagonalize, gap_above_ground
from .weights import GapWeightPair


class WeightGapWarning(UserWarning):
    pass


def _mat(A) -> np.ndarray:
    return A.dense() if isinstance(A, LocalOperator) else np.asarray(A)


def _wrap(M: np.ndarray, like):
    if isinstance(like, LocalOperator):
        return LocalOperator(M, like.support, like.ambient)
    return M


@dataclass(eq=False)
class HeisenbergPropagator:
    spec: SpectralData
    support: tuple = ()
    _phases: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_operator(cls, H: LocalOperator, **kw) -> "HeisenbergPropagator":
        if H.dim > kw.get("max_dense_dim", 4096):
            raise ValueError("propagators need a full spectrum (dense cap exceeded)")
        return cls(diagonalize(H, "dense", **kw), H.support)

    @property
    def U(self) -> np.ndarray:
        return self.spec.eigenvectors

    @property
    def E(self) -> np.ndarray:
        return self.spec.eigenvalues

    def phases(self, t: float) -> np.ndarray:
        t = float(t)
        if t not in self._phases:
            if len(self._phases) > 256:
                self._phases.clear()
            self._phases[t] = np.exp(1j * t * self.E)
        return self._phases[t]

    def to_eigenbasis(self, A) -> np.ndarray:
        M = _mat(A)
        if M.shape != (self.spec.dim, self.spec.dim):
            raise ValueError("operator dimension does not match the propagator")
        return self.U.conj().T @ M @ self.U

    def from_eigenbasis(self, M: np.ndarray) -> np.ndarray:
        return self.U @ M @ self.U.conj().T

    def unitary(self, t: float) -> np.ndarray:
        """e^{-itH}."""
        return (self.U * self.phases(-t)[None, :]) @ self.U.conj().T


def _check_support(prop: HeisenbergPropagator, A):
    if isinstance(A, LocalOperator) and prop.support and A.support != prop.support:
        A = embed(A, prop.support)
    return A


def evolve(prop: HeisenbergPropagator, A, t: float):
    A = _check_support(prop, A)
    At = prop.to_eigenbasis(A)
    ph = prop.phases(t)
    out = prop.from_eigenbasis(ph[:, None] * At * ph.conj()[None, :])
    return _wrap(out, A)


def weighted_op(prop: HeisenbergPropagator, A, weight: str, pair: GapWeightPair):
    """F (weight 'F', multiplier w_hat) or G (weight 'G', multiplier W_hat), spectrally."""
    A = _check_support(prop, A)
    E = prop.E
    diff = E[:, None] - E[None, :]
    if weight == "F":
        mult = pair.w_hat(diff)
    elif weight == "G":
        mult = pair.W_hat(diff)
    else:
        raise ValueError("weight must be 'F' or 'G'")
    out = prop.from_eigenbasis(mult * prop.to_eigenbasis(A))
    if isinstance(A, LocalOperator):
        return LocalOperator(out, A.support, A.ambient, hermitian=False)
    return out


def check_F_ground_commutation(prop: HeisenbergPropagator, pair: GapWeightPair, probes) -> float:
    frag = gap_above_ground(prop.spec)
    if frag.multiplicity != 1 or frag.ambiguous:
        raise ValueError("ground state is not unique; the commutation identity needs a unique ground state")
    if frag.gap is not None and frag.gap < pair.gamma:
        warnings.warn(f"gap {frag.gap:.4g} below gamma {pair.gamma:.4g}: weight-gap mismatch",
                      WeightGapWarning, stacklevel=2)
    omega = prop.U[:, 0]
    P = np.outer(omega, omega.conj())
    worst = 0.0
    for A in probes:
        FA = _mat(weighted_op(prop, A, "F", pair))
        worst = max(worst, operator_norm(FA @ P - P @ FA))
    return worst


def interaction_picture_unitary(prop0: HeisenbergPropagator, prop_s: HeisenbergPropagator, t: float) -> np.ndarray:
    """Gamma_t = e^{itH} e^{-it(H + sV)}."""
    return prop0.unitary(-t) @ prop_s.unitary(t)


def interaction_picture_residual(prop0: HeisenbergPropagator, prop_s: HeisenbergPropagator,
                                 sV: np.ndarray, t: float, h: float = 1e-4) -> float:
    """|| dGamma/dt + i tau_t(sV) Gamma_t || by central differences."""
    G = interaction_picture_unitary(prop0, prop_s, t)
    dG = (interaction_picture_unitary(prop0, prop_s, t + h) - interaction_picture_unitary(prop0, prop_s, t - h)) / (2 * h)
    return operator_norm(dG + 1j * evolve(prop0, sV, t) @ G)


# ---- Lieb-Robinson profiling ----

@dataclass
class LRProfile:
    times: np.ndarray
    profile: np.ndarray  # t -> ||[tau_t(A), B]|| for the given B
    grid: dict  # distance -> array over times
    mu: float | None
    velocity: float | None
    prefactor: float | None
    violations: int
    checked: int
    fit_points: int
    note: str = ""

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "profile": self.profile.tolist(),
                "grid": {str(d): v.tolist() for d, v in sorted(self.grid.items())},
                "mu": self.mu, "velocity": self.velocity, "prefactor": self.prefactor,
                "violations": self.violations, "checked": self.checked,
                "fit_points": self.fit_points, "note": self.note, "empirical": True}


def _comm_norm(X, B, tol: float = 1e-8) -> float:
    """||[X, B]|| for Hermitian X and a sparse Hermitian B; X may be dense or sparse."""
    C = 1j * (X @ B - B @ X)
    if sp.issparse(C):
        C = C.toarray()
    C = np.asarray(C)
    fro = float(np.linalg.norm(C))
    if fro <= 1e-14 * max(1.0, float(np.abs(X).max())):
        return fro  # rounding level, an upper bound is all that matters
    if C.shape[0] <= 4096:
        w = np.linalg.eigvalsh(C)
        return float(max(-w[0], w[-1]))
    # C^2 is PSD and merges the +/- pairs of the commutator spectrum
    op = spla.LinearOperator(C.shape, matvec=lambda v: C @ (C @ v), dtype=C.dtype)
    v0 = np.random.default_rng(1).standard_normal(C.shape[0]).astype(C.dtype)
    try:
        w = spla.eigsh(op, k=1, which="LA", v0=v0, ncv=40, return_eigenvectors=False, tol=tol,
                       maxiter=20 * C.shape[0])
    except spla.ArpackNoConvergence:
        return operator_norm(C, hermitian=True)
    return float(math.sqrt(max(w[0].real, 0.0)))


def lr_commutator_profile(model: FrustrationFreeModel, A: LocalOperator, B: LocalOperator,
                          times: Sequence[float], floor: float = 1e-10, rtol: float = 0.05) -> LRProfile:
    """Commutator norms ||[tau_t(A), B_y]|| for translates B_y of a single-site B.

    The fit is a least-squares line log C = c0 + mu v t - mu d over points
    between the numerical floor and saturation.  The envelope prefactor is fixed
    on even time indices and checked on odd ones.
    """
    if set(A.support) & set(B.support):
        raise ValueError("A and B must have disjoint supports")
    times = np.asarray(times, dtype=float)
    region = tuple(sorted(model.ambient.region))
    H = assemble_hamiltonian(model, region)
    g = model.graph
    a_sites = A.support
    dist_of = lambda y: min(g.distance(x, y) for x in a_sites)

    def sparse_site(M, sites):
        return embed(site_operator(model.ambient, M, list(sites)), region, sparse=True).matrix.tocsr()

    targets, chosen = {}, {}
    if len(B.support) == 1:
        for y in range(g.n_sites):
            if y in a_sites:
                continue
            d = dist_of(y)
            if d not in targets:
                targets[d] = sparse_site(B.dense(), [y])
                chosen[d] = y
    Bs = sparse_site(B.dense(), B.support)
    b_dist = next((d for d, y in chosen.items() if (y,) == tuple(B.support)), None)
    nonzero_H = bool(np.any(H.dense()))
    if nonzero_H:
        prop = HeisenbergPropagator.from_operator(H)
        Ah = prop.to_eigenbasis(embed(A, region))
    else:
        Xs = sparse_site(A.dense(), A.support)
    profile = np.zeros(len(times))
    grid = {d: np.zeros(len(times)) for d in sorted(targets)}
    for i, t in enumerate(times):
        if nonzero_H:
            ph = prop.phases(t)
            X = prop.from_eigenbasis(ph[:, None] * Ah * ph.conj()[None, :])
        else:
            X = Xs
        for d, Bd in targets.items():
            grid[d][i] = _comm_norm(X, Bd)
        profile[i] = grid[b_dist][i] if b_dist in grid else _comm_norm(X, Bs)
    sat = 2.0 * operator_norm(A) * operator_norm(B)
    pts = []
    for d, vals in grid.items():
        for t, c in zip(times, vals):
            if floor < c < 0.5 * sat:
                pts.append((d, t, c))
    if len(pts) < 3 or len({p[0] for p in pts}) < 2:
        return LRProfile(times, profile, grid, None, None, None, 0, 0, len(pts),
                         "profile below the numerical floor" if not pts else "too few points to fit")
    design = np.array([[1.0, t, -d] for d, t, _ in pts])
    y = np.log([c for _, _, c in pts])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    c0, slope_t, mu = coef
    if mu <= 0:
        return LRProfile(times, profile, grid, float(mu), None, None, 0, 0, len(pts),
                         "non-positive spatial decay rate")
    v = slope_t / mu
    even = [(d, t, c) for d, t, c in pts if int(np.argmin(np.abs(times - t))) % 2 == 0]
    odd = [(d, t, c) for d, t, c in pts if int(np.argmin(np.abs(times - t))) % 2 == 1]
    train = even or pts
    logC = max(math.log(c) - mu * (v * t - d) for d, t, c in train)
    violations = sum(1 for d, t, c in odd if c > math.exp(logC + mu * (v * t - d)) * (1 + rtol))
    return LRProfile(times, profile, grid, float(mu), float(v), float(math.exp(logC)),
                     violations, len(odd), len(pts))

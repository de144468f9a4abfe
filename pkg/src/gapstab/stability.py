"""Perturbed families H(s) = H_amb + s V_Lambda, the spectral flow u(s), the dressed
interaction W(s) and its two local decompositions, the form-bound constant beta
and gap sweeps against the line gamma0 - s beta gamma0.

Flow convention: du/ds = -i D(s) u with D(s) = G_s(V), so u P(0) u^* = P(s) and
the transported Hamiltonian is u^* H(s) u.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decay import DecayFunction, _power_exp_tail, moment
from .dynamics import HeisenbergPropagator, weighted_op
from .lattice import ball
from .ltqo import _split
from .models import (AnchoredInteraction, FrustrationFreeModel, assemble_hamiltonian,
                     assemble_perturbation, kernel_basis)
from .operators import LocalOperator, delta_layer, embed, operator_norm
from .spectral import GapFragment, SpectralData, diagonalize, gap_above_ground
from .weights import GapWeightPair

UNITARY_TOL = 1e-9
SPECTRUM_TOL = 1e-9
GENERATOR_HERM_TOL = 1e-10
GROUND_W_TOL = 1e-8
PHI1_TOL = 1e-7
PHI2_TOL = 1e-6
ANNIHILATION_TOL = 1e-8
ORTHO_E_TOL = 1e-8
FORM_TOL = 1e-8
SWEEP_TOL = 1e-8


class StabilityError(RuntimeError):
    pass


class FlowConvergenceError(StabilityError):
    pass


class DecompositionError(StabilityError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


class InvalidGapError(ValueError):
    pass


def _skey(s: float) -> float:
    return round(float(s), 14)


# ---- perturbed family ----

@dataclass(eq=False)
class PerturbedFamily:
    model: FrustrationFreeModel
    phi: AnchoredInteraction
    region: frozenset  # Lambda
    grid: tuple
    H0: np.ndarray
    V: np.ndarray
    max_dense_dim: int = 4096
    _spec: dict = field(default_factory=dict, repr=False)
    _gen: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, model: FrustrationFreeModel, phi: AnchoredInteraction, region=None,
              grid: Sequence[float] = (0.0,), max_dense_dim: int = 4096) -> "PerturbedFamily":
        amb = model.ambient.sites
        if model.ambient.dim > max_dense_dim:
            raise StabilityError(f"ambient dimension {model.ambient.dim} above the dense cap {max_dense_dim}")
        Lam = frozenset(amb if region is None else region)
        if not Lam <= frozenset(amb):
            raise StabilityError("perturbation region outside the ambient volume")
        if phi.R < model.R:
            phi = phi.regrouped(model.R)
        grid = tuple(float(s) for s in grid)
        if not grid or grid[0] != 0.0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise StabilityError("the s-grid must start at 0 and increase")
        H0 = assemble_hamiltonian(model, amb).dense()
        VL = assemble_perturbation(phi, Lam, model.ambient)
        V = embed(VL, amb).dense() if VL.support else np.zeros_like(H0)
        return cls(model, phi, Lam, grid, H0, V.astype(np.result_type(V, H0)), max_dense_dim)

    @property
    def sites(self) -> tuple:
        return self.model.ambient.sites

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    def H(self, s: float) -> np.ndarray:
        return self.H0 + s * self.V

    def spectrum(self, s: float) -> SpectralData:
        k = _skey(s)
        if k not in self._spec:
            if len(self._spec) > 512:
                self._spec.clear()
            op = LocalOperator(self.H(s), self.sites, self.model.ambient, hermitian=True)
            self._spec[k] = diagonalize(op, "dense", max_dense_dim=self.max_dense_dim)
        return self._spec[k]

    def propagator(self, s: float) -> HeisenbergPropagator:
        return HeisenbergPropagator(self.spectrum(s), self.sites)

    def fragment(self, s: float) -> GapFragment:
        return gap_above_ground(self.spectrum(s))

    def E(self, s: float) -> float:
        return float(self.spectrum(s).eigenvalues[0])

    def gap(self, s: float) -> float | None:
        return self.fragment(s).gap

    def table(self) -> list[dict]:
        rows = []
        for s in self.grid:
            f = self.fragment(s)
            rows.append({"s": s, "E": f.E, "gap": f.gap, "multiplicity": f.multiplicity,
                         "ambiguous": f.ambiguous})
        return rows

    def jumps(self) -> list[float]:
        """Grid points where E(s) moves faster than the Weyl bound |dE/ds| <= ||V|| allows."""
        vn = operator_norm(self.V, hermitian=True)
        out = []
        for a, b in zip(self.grid, self.grid[1:]):
            if abs(self.E(b) - self.E(a)) > vn * (b - a) * (1 + 1e-9) + 1e-10:
                out.append(b)
        return out

    def generator(self, s: float, pair: GapWeightPair) -> np.ndarray:
        """D(s) = G_s(V), Hermitian."""
        k = (_skey(s), id(pair))
        if k not in self._gen:
            if len(self._gen) > 64:
                self._gen.clear()
            D = weighted_op(self.propagator(s), self.V, "G", pair)
            dev = float(np.abs(D - D.conj().T).max()) if D.size else 0.0
            if dev > GENERATOR_HERM_TOL * (1 + float(np.abs(self.V).max())):
                raise StabilityError(f"flow generator not Hermitian ({dev:.3e})")
            self._gen[k] = 0.5 * (D + D.conj().T)
        return self._gen[k]


def flow_generator(family: PerturbedFamily, s: float, pair: GapWeightPair) -> LocalOperator:
    return LocalOperator(family.generator(s, pair), family.sites, family.model.ambient, hermitian=True)


def generator_lipschitz(family: PerturbedFamily, pair: GapWeightPair, s: float, s0: float,
                        tW_L1: float | None = None) -> dict:
    """Compare ||D(s) - D(s0)|| with 2 ||V||^2 |s - s0| ||t W||_1."""
    diff = operator_norm(family.generator(s, pair) - family.generator(s0, pair), hermitian=True)
    tW = pair.norms()["tW_L1"] if tW_L1 is None else tW_L1
    bound = 2.0 * operator_norm(family.V, hermitian=True) ** 2 * abs(s - s0) * tW
    return {"difference": diff, "bound": bound, "ratio": diff / bound if bound > 0 else 0.0,
            "empirical": True}


# ---- spectral flow ----

@dataclass
class SpectralFlowState:
    gamma: float
    pair: GapWeightPair
    grid: tuple
    unitaries: dict  # s -> u(s)
    steps: dict  # interval end -> step size used
    residuals: dict  # s -> transport residual, None where transport is not asserted
    unitarity: dict  # s -> ||u^* u - 1|| before re-projection at the last step
    halvings: int = 0
    flagged: list = field(default_factory=list)

    def u(self, s: float) -> np.ndarray:
        return self.unitaries[_skey(s)]

    def stats(self) -> dict:
        res = [r for r in self.residuals.values() if r is not None]
        return {"gamma": self.gamma, "steps": {str(k): v for k, v in sorted(self.steps.items())},
                "worst_transport_residual": max(res, default=0.0),
                "worst_unitarity": max(self.unitarity.values(), default=0.0),
                "halvings": self.halvings, "flagged": list(self.flagged)}


def _polar(u: np.ndarray) -> np.ndarray:
    W, _, Vh = np.linalg.svd(u)
    return W @ Vh


def _rk4(family: PerturbedFamily, pair: GapWeightPair, u: np.ndarray, a: float, b: float, n: int) -> tuple:
    h = (b - a) / n
    drift = 0.0
    for i in range(n):
        s = a + i * h
        f = lambda t, v: -1j * (family.generator(t, pair) @ v)
        k1 = f(s, u)
        k2 = f(s + h / 2, u + (h / 2) * k1)
        k3 = f(s + h / 2, u + (h / 2) * k2)
        k4 = f(s + h, u + h * k3)
        u = u + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = max(drift, float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()))
        u = _polar(u)
    return u, drift


def _asserted(family: PerturbedFamily, s: float) -> bool:
    f0, fs = family.fragment(0.0), family.fragment(s)
    return f0.multiplicity == 1 and fs.multiplicity == 1 and not (f0.ambiguous or fs.ambiguous)


def _transport(family: PerturbedFamily, u: np.ndarray, s: float) -> float:
    w0 = family.spectrum(0.0).ground_state
    ws = family.spectrum(s).ground_state
    a = u @ w0
    return operator_norm(np.outer(a, a.conj()) - np.outer(ws, ws.conj()), hermitian=True)


def integrate_flow(family: PerturbedFamily, pair: GapWeightPair, grid: Sequence[float] | None = None,
                   h: float = 0.005, budget: float = 1e-6, max_halvings: int = 6) -> SpectralFlowState:
    """RK4 with polar re-unitarization; each interval is redone with halved steps until
    the transport residual grows by at most ``budget`` per unit s."""
    grid = tuple(family.grid if grid is None else (float(s) for s in grid))
    if not grid or grid[0] != 0.0:
        raise StabilityError("the flow grid must start at 0")
    D = family.dim
    u = np.eye(D, dtype=complex)
    state = SpectralFlowState(pair.gamma, pair, grid, {0.0: u.copy()}, {}, {0.0: 0.0 if _asserted(family, 0.0) else None},
                              {0.0: 0.0})
    prev_res = 0.0
    for a, b in zip(grid, grid[1:]):
        L = b - a
        step = min(h, L)
        check = _asserted(family, b)
        for attempt in range(max_halvings + 1):
            n = max(1, math.ceil(L / step - 1e-9))
            un, drift = _rk4(family, pair, u, a, b, n)
            res = _transport(family, un, b) if check else None
            if res is None or res <= prev_res + budget * L + 1e-12:
                break
            if attempt == max_halvings:
                gaps_ok = all((g := family.gap(t)) is not None and g >= pair.gamma for t in (a, b))
                if gaps_ok:
                    raise FlowConvergenceError(
                        f"transport residual {res:.3e} at s={b} after {max_halvings} halvings")
                state.flagged.append(b)
                break
            step /= 2
            state.halvings += 1
        u = un
        k = _skey(b)
        state.unitaries[k] = u.copy()
        state.steps[k] = L / n
        state.residuals[k] = res
        state.unitarity[k] = drift
        if res is not None:
            prev_res = max(prev_res, res)
    return state


def transport_check(flow: SpectralFlowState, family: PerturbedFamily) -> dict:
    per, skipped = {}, []
    for s in flow.grid:
        if _asserted(family, s):
            per[s] = _transport(family, flow.u(s), s)
        else:
            skipped.append(s)
    return {"worst": max(per.values(), default=0.0), "per_s": {str(k): v for k, v in per.items()},
            "not_asserted": skipped}


# ---- dressed interaction ----

@dataclass
class DressedW:
    s: float
    W: np.ndarray
    E: float
    ground_expectation: float | None
    spectrum_residual: float

    @property
    def norm(self) -> float:
        return operator_norm(self.W, hermitian=True)


def dressed_hamiltonian_W(family: PerturbedFamily, flow: SpectralFlowState, s: float,
                          tol: float = GROUND_W_TOL) -> DressedW:
    u = flow.u(s)
    T = u.conj().T @ family.H(s) @ u
    T = 0.5 * (T + T.conj().T)
    spec = family.spectrum(s)
    sres = float(np.abs(np.linalg.eigvalsh(T) - spec.eigenvalues).max())
    if sres > SPECTRUM_TOL * max(1.0, spec.hnorm):
        raise StabilityError(f"conjugation changed the spectrum by {sres:.3e}")
    E = float(spec.eigenvalues[0])
    W = T - family.H0 - E * np.eye(family.dim)
    ge = None
    if _asserted(family, s):
        w0 = family.spectrum(0.0).ground_state
        ge = float(abs(w0.conj() @ W @ w0))
        if ge > tol:
            raise StabilityError(f"<Omega, W Omega> = {ge:.3e} at s={s}")
    return DressedW(float(s), W, E, ge, sres)


def k_maps(family: PerturbedFamily, flow: SpectralFlowState, s: float, A: LocalOperator,
           layers: bool = False):
    """(K1(A), K2(A)) on the ambient, optionally with the norms of their Delta-layers."""
    amb = family.sites
    A = embed(A, amb)
    u = flow.u(s)
    Fs = weighted_op(family.propagator(s), A.dense(), "F", flow.pair)
    F0 = weighted_op(family.propagator(0.0), A.dense(), "F", flow.pair)
    Us = u.conj().T @ Fs @ u
    herm = A.hermitian
    K1 = LocalOperator(Us - F0, amb, A.ambient, hermitian=herm)
    K2 = LocalOperator(s * Us, amb, A.ambient, hermitian=herm)
    if not layers:
        return K1, K2
    return K1, K2, _layer_norms(K1), _layer_norms(K2)


def _layer_norms(A: LocalOperator) -> dict:
    """n -> ||Pi_{b_x(n)}(A) - A|| around the tightest centre: a support-decay profile."""
    g = A.ambient.graph
    out = {}
    best = None
    for x in A.support:
        prof = {n: operator_norm(embed(_ce(A, ball(g, x, n)), A.support) - A)
                for n in range(g.eccentricity(x) + 1)}
        if best is None or sum(prof.values()) < sum(best.values()):
            best = prof
    out.update(best or {})
    return out


def _ce(A: LocalOperator, X) -> LocalOperator:
    from .operators import conditional_expectation
    return conditional_expectation(A, X)


@dataclass
class DressedInteraction:
    s: float
    phi1: dict  # (x, m) -> LocalOperator on the ambient
    G: dict  # (x, m) -> ||Phi1(x, m)|| / s
    reconstruction1: float
    commutation: dict  # x -> ||[sum_m Phi1(x, m), P_Omega]||
    phi2: dict = field(default_factory=dict)  # (x, m) -> LocalOperator on b_x(min(m, ecc))
    annihilation: float | None = None
    reconstruction2: float | None = None
    orthogonality: float | None = None
    shape_ratio: dict = field(default_factory=dict)  # (x, m) -> ||Phi2|| / (2 s G2_shape)
    note: str = ""

    def G1(self, x: int, m: int) -> float:
        return math.fsum(v for (y, n), v in self.G.items() if y == x and n >= m)

    def G_by_scale(self) -> dict:
        out: dict = {}
        for (x, m), v in self.G.items():
            out[m] = max(out.get(m, 0.0), v)
        return dict(sorted(out.items()))

    def G2_by_scale(self) -> dict:
        """n -> sup_x ||Phi2(x, n)|| / (2 s)."""
        out: dict = {}
        if self.s == 0:
            return out
        for (x, m), op in self.phi2.items():
            out[m] = max(out.get(m, 0.0), op.norm() / (2 * abs(self.s)))
        return dict(sorted(out.items()))

    def summary(self) -> dict:
        return {"s": self.s, "reconstruction_phi1": self.reconstruction1,
                "reconstruction_phi2": self.reconstruction2, "annihilation": self.annihilation,
                "E_orthogonality": self.orthogonality,
                "commutation": max(self.commutation.values(), default=0.0),
                "G": {str(k): v for k, v in self.G_by_scale().items()},
                "G2": {str(k): v for k, v in self.G2_by_scale().items()},
                "shape_ratio_max": max(self.shape_ratio.values(), default=None),
                "note": self.note}


def decompose_phi1(family: PerturbedFamily, flow: SpectralFlowState, s: float,
                   tol: float = PHI1_TOL) -> DressedInteraction:
    model = family.model
    g = model.graph
    amb = family.sites
    R = model.R
    terms: dict = {}

    def add(key, op):
        terms[key] = op if key not in terms else terms[key] + op

    Lam = family.region
    anchors = sorted(set(model.h) | {x for (x, _) in family.phi.terms})
    for x in anchors:
        ecc = g.eccentricity(x)
        if x in model.h:
            K1, _ = k_maps(family, flow, s, model.h[x])
            for m in range(R, ecc + 1):
                add((x, m), delta_layer(K1, x, R, m))
        if x in Lam:
            for (y, k), op in sorted(family.phi.terms.items()):
                if y != x or k < R or not ball(g, x, k) <= Lam:
                    continue
                _, K2 = k_maps(family, flow, s, op)
                for m in range(k, max(k, ecc) + 1):
                    add((x, m), delta_layer(K2, x, k, m))
    W = dressed_hamiltonian_W(family, flow, s)
    total = np.zeros_like(family.H0, dtype=complex)
    per_x: dict = {}
    for (x, m), op in terms.items():
        M = embed(op, amb).dense()
        total += M
        per_x[x] = per_x.get(x, 0.0) + M
    resid = operator_norm(total - (W.W + W.E * np.eye(family.dim)))
    if resid > tol:
        raise DecompositionError("sum of Phi1 terms does not reproduce W + E", resid)
    comm = {}
    if _asserted(family, s):
        w0 = family.spectrum(0.0).ground_state
        P = np.outer(w0, w0.conj())
        comm = {x: operator_norm(M @ P - P @ M) for x, M in per_x.items()}
    G = {k: (op.norm() / abs(s) if s else 0.0) for k, op in sorted(terms.items())}
    return DressedInteraction(float(s), dict(sorted(terms.items())), G, resid, comm)


def _expectation(A: LocalOperator, omega: np.ndarray, full) -> complex:
    Om = _split(omega, A.support, full, A.ambient.site_dims)
    return complex(np.einsum("ra,ab,rb->", Om.conj(), A.dense(), Om))


def decompose_phi2(model: FrustrationFreeModel, dressed: DressedInteraction, family: PerturbedFamily,
                   W: DressedW | None = None, G0: DecayFunction | None = None,
                   tol: float = PHI2_TOL, annihilation_tol: float = ANNIHILATION_TOL,
                   ortho_tol: float = ORTHO_E_TOL) -> DressedInteraction:
    """Phi2 = Theta1 + Theta2 from the omega-centred Phi1 terms and the layer projectors E_n."""
    g = model.graph
    amb = family.sites
    amb_set = frozenset(amb)
    R = model.R
    V_amb, _ = kernel_basis(model, amb)
    if V_amb.shape[1] != 1:
        dressed.note = f"ambient kernel has dimension {V_amb.shape[1]}; Phi2 not built"
        return dressed
    omega = V_amb[:, 0]
    s = dressed.s
    proj_cache: dict = {}

    def P(x, n, target):
        """Ground projector of b_x(n) embedded into the sites ``target``."""
        n = min(n, g.eccentricity(x))
        key = (x, n)
        if key not in proj_cache:
            reg = tuple(sorted(ball(g, x, n)))
            Vk, _ = kernel_basis(model, reg)
            proj_cache[key] = LocalOperator(Vk @ Vk.conj().T, reg, model.ambient, hermitian=True)
        return embed(proj_cache[key], target).dense()

    def E(x, n, target):
        D = model.ambient.dim_of(target)
        if n == R:
            return np.eye(D) - P(x, R, target)
        return P(x, n - 1, target) - P(x, n, target)

    phi_w: dict = {}
    for (x, m), op in dressed.phi1.items():
        reg = tuple(sorted(ball(g, x, m))) if m <= g.eccentricity(x) else amb
        loc = _ce(op, reg) if op.support != reg else op
        c = _expectation(loc, omega, amb)
        phi_w[(x, m)] = loc.dense() - c * np.eye(loc.dim)
        phi_w[(x, m)] = LocalOperator(phi_w[(x, m)], reg, model.ambient)

    out: dict = {}
    worst_ortho = 0.0
    xs = sorted({x for x, _ in dressed.phi1})
    for x in xs:
        ecc = g.eccentricity(x)
        ks = sorted(k for (y, k) in phi_w if y == x)
        # E_n mutual orthogonality, checked on the ambient
        Es = [E(x, n, amb) for n in range(R, ecc + 1)]
        for i, Ei in enumerate(Es):
            for j, Ej in enumerate(Es):
                target = Ei if i == j else 0.0
                worst_ortho = max(worst_ortho, float(np.abs(Ei @ Ej - target).max()))
        Pomega = np.outer(omega, omega.conj())
        worst_ortho = max(worst_ortho, float(np.abs(sum(Es) - (np.eye(len(omega)) - Pomega)).max())
                          if Es else 0.0)
        if worst_ortho > ortho_tol:
            raise DecompositionError(f"layer projectors at x={x} are not mutually orthogonal", worst_ortho)
        for m in range(R, 2 * ecc + 1):
            target = tuple(sorted(ball(g, x, m))) if m <= ecc else amb
            D = model.ambient.dim_of(target)
            acc = np.zeros((D, D), dtype=complex)
            used = False
            if m % 2 == 0 and m // 2 >= R and (x, m // 2) in phi_w:
                Q = np.eye(D) - P(x, m, target)
                A = embed(phi_w[(x, m // 2)], target).dense()
                acc += Q @ A @ Q
                used = True
            if R < m <= ecc:
                top = math.ceil(m / 2) - 1
                S = sum((embed(phi_w[(x, k)], target).dense() for k in ks if R <= k <= top), np.zeros((D, D)))
                if np.any(S):
                    Em = E(x, m, target)
                    Qm1 = np.eye(D) - P(x, m - 1, target)
                    Qm = np.eye(D) - P(x, m, target)
                    acc += Em @ S @ Qm1 + Qm @ S @ Em
                    used = True
            if used:
                acc = 0.5 * (acc + acc.conj().T)
                out[(x, m)] = LocalOperator(acc, target, model.ambient, hermitian=True)
    # contracts
    annih = 0.0
    total = np.zeros((len(omega), len(omega)), dtype=complex)
    for (x, m), op in out.items():
        Pm = P(x, m, op.support)
        annih = max(annih, operator_norm(op.dense() @ Pm))
        total += embed(op, amb).dense()
    if W is None:
        raise StabilityError("decompose_phi2 needs the dressed W for the reconstruction check")
    recon = operator_norm(total - W.W, hermitian=True)
    dressed.phi2 = dict(sorted(out.items()))
    dressed.annihilation = annih
    dressed.reconstruction2 = recon
    dressed.orthogonality = worst_ortho
    if annih > annihilation_tol:
        raise DecompositionError("Phi2 terms do not annihilate the local ground states", annih)
    if recon > tol:
        raise DecompositionError("sum of Phi2 terms does not reproduce W", recon)
    if G0 is not None and s:
        nu = g.nu
        for (x, m), op in dressed.phi2.items():
            half = math.ceil(m / 2)
            Gx = dressed.G.get((x, half), 0.0)
            shape = (Gx + 2 * dressed.G1(x, m + 1)
                     + 2 * dressed.G1(x, R) * math.sqrt((1 + m) ** nu * float(G0(half))))
            if shape > 0:
                dressed.shape_ratio[(x, m)] = op.norm() / (2 * abs(s) * shape)
    return dressed


# ---- form bound and gap sweep ----

@dataclass
class BetaResult:
    beta: float
    partial: float
    tail: float | None
    flag: str  # "exact" | "rigorous" | "empirical"
    terms: dict

    def to_dict(self) -> dict:
        return {"beta": self.beta, "partial": self.partial, "tail": self.tail, "flag": self.flag,
                "terms": {str(k): v for k, v in sorted(self.terms.items())}}


def form_bound_beta(G, c: float, zeta: float, gamma, R: int = 0, horizon: int = 400) -> BetaResult:
    """beta = c sum_{n >= R} max(n, 1)^zeta G(n) / gamma(n).

    ``G`` is a table {n: value} (zero beyond its last key, exact in finite volume)
    or a DecayFunction.  ``gamma`` is a table, a callable, or a pair (gamma1, alpha)
    meaning gamma(n) = gamma1 max(n, 1)^-alpha; only the pair admits a tail bound.
    """
    if isinstance(gamma, tuple):
        g1, alpha = float(gamma[0]), float(gamma[1])
        if g1 <= 0:
            raise InvalidGapError("gamma1 must be positive")
        gam: Callable = lambda n: g1 * max(n, 1) ** (-alpha)
    elif isinstance(gamma, dict):
        gam = lambda n: gamma[n] if n in gamma else gamma[max(gamma)]
    else:
        gam = gamma
    w = lambda n: max(n, 1) ** zeta
    if isinstance(G, dict):
        terms = {}
        for n, v in sorted(G.items()):
            if n < R or v == 0:
                continue
            gn = gam(n)
            if not gn > 0:
                raise InvalidGapError(f"gamma({n}) = {gn} is not positive")
            if v < 0:
                raise ValueError("G envelope must be non-negative")
            terms[n] = c * w(n) * v / gn
        total = math.fsum(terms.values())
        return BetaResult(total, total, 0.0, "exact", terms)
    if not isinstance(G, DecayFunction):
        raise TypeError("G must be a table or a DecayFunction")
    terms = {}
    for n in range(R, horizon + 1):
        gn = gam(n)
        if not gn > 0:
            raise InvalidGapError(f"gamma({n}) = {gn} is not positive")
        terms[n] = c * w(n) * float(G(n)) / gn
    partial = math.fsum(terms.values())
    tail, flag = None, "empirical"
    N = horizon + 1
    if G.family == "zero" or (G.family == "table" and G.tail == "zero" and len(G.values) <= N):
        tail, flag = 0.0, "exact"
    elif G.family == "stretched_exp" and isinstance(gamma, tuple):
        if G.scale == 0:
            tail, flag = 0.0, "exact"
        elif G.a > 0:
            # (1+n)^-zetaG <= 2^|zetaG| n^|zetaG| when zetaG < 0, <= 1 otherwise
            zneg = max(0.0, -G.zeta)
            coef = c * G.scale * 2.0 ** zneg / g1
            tail, flag = _power_exp_tail(coef, zeta + alpha + zneg, G.a, G.theta, N), "rigorous"
        else:
            m = moment(G, zeta + alpha, 1.0, horizon)
            if m.tail is not None and math.isfinite(m.tail):
                tail, flag = c * m.tail / g1, "rigorous"
    beta = partial + (tail or 0.0)
    return BetaResult(beta, partial, tail, flag, terms)


def stability_beta(G2: dict, c: float, zeta: float, gamma, R: int = 0) -> BetaResult:
    """beta = 2 c sum max(n,1)^zeta G2(n) / gamma(n), with G2(n) = sup_x ||Phi2(x,n,s*)|| / (2 s*)."""
    res = form_bound_beta(G2, c, zeta, gamma, R)
    return BetaResult(2 * res.beta, 2 * res.partial, None if res.tail is None else 2 * res.tail,
                      res.flag, {n: 2 * v for n, v in res.terms.items()})


@dataclass
class FormBoundResult:
    beta: float
    min_minus: float  # min spec(beta H0 - W)
    min_plus: float  # min spec(beta H0 + W)
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {"beta": self.beta, "min_minus": self.min_minus, "min_plus": self.min_plus,
                "tolerance": self.tolerance, "passed": self.passed}


def verify_form_bound(H0, W, beta: float, rel_tol: float = FORM_TOL) -> FormBoundResult:
    A = H0.dense() if isinstance(H0, LocalOperator) else np.asarray(H0)
    B = W.dense() if isinstance(W, LocalOperator) else np.asarray(W)
    herm = lambda M: 0.5 * (M + M.conj().T)
    lo_m = float(np.linalg.eigvalsh(herm(beta * A - B))[0])
    lo_p = float(np.linalg.eigvalsh(herm(beta * A + B))[0])
    tol = rel_tol * (1 + beta * operator_norm(A, hermitian=True))
    return FormBoundResult(float(beta), lo_m, lo_p, tol, lo_m >= -tol and lo_p >= -tol)


@dataclass
class StabilityVerdict:
    beta: float
    inputs: dict  # c, zeta, gamma1, alpha
    gamma0: float
    gamma: float
    s0: float  # math.inf when beta = 0
    rows: list
    passed: bool

    def to_dict(self) -> dict:
        s0 = "inf" if math.isinf(self.s0) else self.s0
        return {"beta": self.beta, "inputs": self.inputs, "gamma0": self.gamma0, "gamma": self.gamma,
                "s0": s0, "rows": self.rows, "passed": self.passed}


def threshold(gamma0: float, gamma: float, beta: float) -> float:
    if beta <= 0:
        return math.inf
    return max(0.0, (gamma0 - gamma) / (beta * gamma0))


def stability_sweep(family: PerturbedFamily, beta: float, gamma: float, inputs: dict | None = None,
                    grid: Sequence[float] | None = None, points: int = 11,
                    tol: float = SWEEP_TOL) -> StabilityVerdict:
    f0 = family.fragment(0.0)
    if f0.gap is None:
        raise StabilityError("the unperturbed spectrum has no gap above the ground level")
    gamma0 = f0.gap
    s0 = threshold(gamma0, gamma, beta)
    if grid is None:
        grid = family.grid if math.isinf(s0) or s0 == 0 else np.linspace(0.0, 1.2 * s0, points)
    rows = []
    passed = True
    crossed = False
    for s in grid:
        s = float(s)
        f = family.fragment(s)
        crossed |= f.multiplicity != f0.multiplicity or f.ambiguous
        bound = gamma0 - abs(s) * beta * gamma0
        gap = f.gap
        if crossed or abs(s) > s0:
            status = "outside hypothesis"
        elif gap is not None and gap >= bound - tol:
            status = "pass"
        else:
            status = "fail"
            passed = False
        rows.append({"s": s, "gap": gap, "bound": bound, "multiplicity": f.multiplicity,
                     "E": f.E, "status": status})
    return StabilityVerdict(float(beta), dict(inputs or {}), gamma0, float(gamma), s0, rows, passed)

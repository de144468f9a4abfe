"""Frustration-free interactions, anchored perturbations and the model zoo."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeGraph, ball, CertificationRecord
from .operators import (AmbientVolume, LocalOperator, config_offsets, operator_norm, read_operator,
                        site_operator, DENSE_EMBED_LIMIT)

PSD_TOL = 1e-12
FF_TOL = 1e-10


class ModelError(ValueError):
    pass


class FrustrationError(ModelError):
    pass


# single-site matrices; basis index 0 is spin up (largest S^z)
PAULI = {
    "id": np.eye(2),
    "sx": np.array([[0, 1], [1, 0]], dtype=complex),
    "sy": np.array([[0, -1j], [1j, 0]]),
    "sz": np.diag([1.0, -1.0]).astype(complex),
    "n_up": np.diag([1.0, 0.0]).astype(complex),
    "n_down": np.diag([0.0, 1.0]).astype(complex),
}


def spin_matrices(S: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Sx, Sy, Sz) for spin S, basis ordered m = S, S-1, ..., -S."""
    m = np.arange(S, -S - 1, -1)
    d = len(m)
    Sz = np.diag(m).astype(complex)
    Sp = np.zeros((d, d), dtype=complex)
    for i in range(1, d):
        Sp[i - 1, i] = math.sqrt(S * (S + 1) - m[i] * (m[i] + 1))
    Sx = (Sp + Sp.conj().T) / 2
    Sy = (Sp - Sp.conj().T) / 2j
    return Sx, Sy, Sz


def aklt_projector() -> np.ndarray:
    """Projector onto total spin 2 of two spin-1 sites, via the Casimir."""
    Sx, Sy, Sz = spin_matrices(1)
    I = np.eye(3)
    tot = [np.kron(I, s) + np.kron(s, I) for s in (Sx, Sy, Sz)]
    C = sum(t @ t for t in tot)
    # C has eigenvalues S(S+1) = 0, 2, 6; C(C-2)/24 is 1 on S=2 and 0 otherwise
    P = C @ (C - 2 * np.eye(9)) / 24.0
    P = np.real_if_close(P, tol=1e3)
    if np.abs(P @ P - P).max() > 1e-12:
        raise ModelError("spin-2 projector construction is not idempotent")
    return np.asarray(P, dtype=float)


def spin1_operators() -> dict:
    Sx, Sy, Sz = spin_matrices(1)
    return {"Sx": Sx, "Sy": Sy, "Sz": Sz, "id": np.eye(3)}


@dataclass
class AnchoredInteraction:
    terms: dict  # (x, n) -> LocalOperator supported in b_x(n)
    R: int = 0
    strength: float | None = None
    rate: float | None = None
    exponent: float | None = None
    finite_range: bool = False

    def __post_init__(self):
        self.terms = {(int(x), int(n)): op for (x, n), op in self.terms.items()}

    @property
    def empty(self) -> bool:
        return not self.terms

    def keys(self) -> list:
        return sorted(self.terms)

    def validate(self, graph: LatticeGraph) -> CertificationRecord:
        herm, contained, decays = True, True, True
        worst = {"hermiticity": 0.0, "decay_ratio": 0.0}
        for (x, n), op in sorted(self.terms.items()):
            M = op.dense()
            dev = float(np.abs(M - M.conj().T).max()) if M.size else 0.0
            worst["hermiticity"] = max(worst["hermiticity"], dev)
            herm &= dev <= PSD_TOL * (1 + (np.abs(M).max() if M.size else 0.0))
            contained &= set(op.support) <= ball(graph, x, n)
            if self.strength is not None and self.rate is not None:
                bound = self.strength * math.exp(-self.rate * n ** (self.exponent or 1.0))
                nrm = op.norm()
                worst["decay_ratio"] = max(worst["decay_ratio"], nrm / bound if bound > 0 else math.inf)
                decays &= nrm <= bound * (1 + 1e-12)
        return CertificationRecord(herm and contained and decays,
                                   {"hermitian": herm, "support_in_ball": contained, "decay": decays,
                                    **worst, "empirical": False})

    def regrouped(self, R: int) -> "AnchoredInteraction":
        """Move terms with n < R onto (x, R); b_x(n) is contained in b_x(R)."""
        out: dict = {}
        for (x, n), op in sorted(self.terms.items()):
            key = (x, max(n, R))
            out[key] = op if key not in out else out[key] + op
        return AnchoredInteraction(out, R, self.strength, self.rate, self.exponent, self.finite_range)

    def norm_table(self) -> dict:
        return {key: op.norm() for key, op in sorted(self.terms.items())}

    def sup_norm(self) -> float:
        return max((op.norm() for op in self.terms.values()), default=0.0)


@dataclass(eq=False)
class FrustrationFreeModel:
    name: str
    ambient: AmbientVolume
    h: dict  # x -> LocalOperator (PSD), anchored at (x, R)
    R: int
    params: dict = field(default_factory=dict)
    certification: CertificationRecord | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def graph(self) -> LatticeGraph:
        return self.ambient.graph

    @property
    def eta(self) -> AnchoredInteraction:
        return AnchoredInteraction({(x, self.R): op for x, op in self.h.items()}, self.R, finite_range=True)

    @property
    def eta_sup(self) -> float:
        return max((op.norm() for op in self.h.values()), default=0.0)

    def terms_in(self, region: Iterable[int]) -> list[int]:
        region = frozenset(region)
        return [x for x in sorted(self.h) if x in region and set(self.h[x].support) <= region]

    def describe(self) -> dict:
        return {"name": self.name, "R": self.R, "params": dict(sorted(self.params.items())),
                "n_sites": self.graph.n_sites, "site_dims": sorted(set(self.ambient.site_dims)),
                "ambient_dim": self.ambient.dim, "eta_sup": self.eta_sup}


def assemble_sum(ops: Sequence[LocalOperator], region: Iterable[int], ambient: AmbientVolume,
                 sparse: bool | None = None) -> LocalOperator:
    T = tuple(sorted(region))
    D = ambient.dim_of(T)
    if sparse is None:
        sparse = D > DENSE_EMBED_LIMIT
    rows, cols, data = [], [], []
    dims = ambient.site_dims
    for op in ops:
        rest = [y for y in T if y not in set(op.support)]
        oS = config_offsets(op.support, T, dims)
        oR = config_offsets(rest, T, dims)
        C = sp.coo_matrix(op.dense())
        rows.append((oR[:, None] + oS[C.row][None, :]).ravel())
        cols.append((oR[:, None] + oS[C.col][None, :]).ravel())
        data.append(np.tile(C.data, len(oR)))
    if rows:
        M = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(D, D))
    else:
        M = sp.csr_matrix((D, D))
    M.sum_duplicates()
    M.sort_indices()
    if np.iscomplexobj(M.data) and not np.any(M.data.imag):
        M = M.real.tocsr()
    if not sparse:
        M = M.toarray()
    return LocalOperator(M, T, ambient, hermitian=True)


def assemble_hamiltonian(model: FrustrationFreeModel, region: Iterable[int], sparse: bool | None = None) -> LocalOperator:
    region = model.graph.check_region(region)
    key = ("H", region, sparse)
    if key not in model._cache:
        ops = [model.h[x] for x in model.terms_in(region)]
        model._cache[key] = assemble_sum(ops, region, model.ambient, sparse)
    return model._cache[key]


def assemble_perturbation(phi: AnchoredInteraction, region: Iterable[int], ambient: AmbientVolume,
                          sparse: bool | None = None) -> LocalOperator:
    region = frozenset(region)
    g = ambient.graph
    ops = [op for (x, n), op in sorted(phi.terms.items())
           if x in region and n >= phi.R and ball(g, x, n) <= region]
    return assemble_sum(ops, region, ambient, sparse)


def kernel_basis(model: FrustrationFreeModel, region: Iterable[int], max_dense_dim: int = 4096,
                 max_iterative_dim: int = 1 << 16):
    """Orthonormal basis (columns) of ker H_region and the spectral data used."""
    from .spectral import diagonalize, gap_above_ground, kernel_tolerance

    region = model.graph.check_region(region)
    key = ("K", region)
    if key not in model._cache:
        H = assemble_hamiltonian(model, region)
        if H.dim <= max_dense_dim:
            spec = diagonalize(H, "dense")
        else:
            spec = diagonalize(H, "iterative", k=12, max_iterative_dim=max_iterative_dim)
        tol = kernel_tolerance(spec)
        if spec.eigenvalues[0] > tol or spec.eigenvalues[0] < -tol:
            raise FrustrationError(f"min spec(H) = {spec.eigenvalues[0]:.3e} on region {sorted(region)}")
        frag = gap_above_ground(spec, tol)
        V = spec.eigenvectors[:, : frag.multiplicity]
        model._cache[key] = (V, spec)
    return model._cache[key]


def ground_projector(model: FrustrationFreeModel, region: Iterable[int]) -> LocalOperator:
    V, _ = kernel_basis(model, region)
    region = tuple(sorted(region))
    return LocalOperator(V @ V.conj().T, region, model.ambient, hermitian=True)


def apply_local(M: np.ndarray, sub: Sequence[int], full: Sequence[int], dims, vecs: np.ndarray) -> np.ndarray:
    """(M tensor identity) applied to the columns of vecs, M acting on the sites ``sub`` of ``full``."""
    sub = tuple(sorted(sub))
    rest = [y for y in full if y not in set(sub)]
    oS = config_offsets(sub, full, dims)
    oR = config_offsets(rest, full, dims)
    idx = oR[:, None] + oS[None, :]
    V = vecs[idx]  # (dR, dS, k)
    out = np.empty(vecs.shape, dtype=np.result_type(M.dtype, vecs.dtype))
    out[idx] = np.einsum("ab,rbk->rak", M, V)
    return out


def certify_frustration_free(model: FrustrationFreeModel, volumes: Sequence[Iterable[int]],
                             max_dense_dim: int = 4096) -> CertificationRecord:
    from .spectral import diagonalize

    psd = {}
    psd_ok = True
    for x, op in sorted(model.h.items()):
        lo = float(np.linalg.eigvalsh(op.dense())[0])
        psd[str(x)] = lo
        psd_ok &= lo >= -PSD_TOL
    rows = []
    ff_ok = True
    seen = {}
    for vol in volumes:
        vol = model.graph.check_region(vol)
        H = assemble_hamiltonian(model, vol)
        fp = fingerprint(H)
        if fp not in seen:
            if H.dim <= max_dense_dim:
                spec = diagonalize(H, "dense")
            else:
                spec = diagonalize(H, "iterative", k=4)
            seen[fp] = float(spec.eigenvalues[0])
        lo = seen[fp]
        ok = -FF_TOL <= lo <= FF_TOL
        ff_ok &= ok
        rows.append({"region": sorted(vol), "min_spec": lo, "passed": ok})
    return CertificationRecord(psd_ok and ff_ok, {"psd": psd_ok, "term_min_eig": psd,
                                                  "volumes": rows, "tolerance": FF_TOL})


def fingerprint(H: LocalOperator) -> str:
    from .spectral import operator_fingerprint

    return operator_fingerprint(H)


def nesting_residual(model: FrustrationFreeModel, outer: Iterable[int], inner: Iterable[int]) -> float:
    """||P_outer P_inner - P_outer|| computed as ||(1 - P_inner) V_outer||."""
    outer = tuple(sorted(outer))
    inner = tuple(sorted(inner))
    if not set(inner) <= set(outer):
        raise ModelError("inner volume must be contained in the outer one")
    Vo, _ = kernel_basis(model, outer)
    Vi, _ = kernel_basis(model, inner)
    Pi = Vi @ Vi.conj().T
    PV = apply_local(Pi, inner, outer, model.ambient.site_dims, Vo)
    return float(np.linalg.norm(Vo - PV, 2)) if Vo.size else 0.0


# ---- zoo ----

ZOO = {
    "paramagnet": "on-site projectors |down><down|, d=2, R=0",
    "aklt_open": "spin-1 AKLT chain, open boundary, R=1",
    "aklt_periodic": "spin-1 AKLT ring, R=1",
    "ising_projector": "d=2 bond projector onto anti-aligned pairs with optional hopping, R=1",
    "custom": "terms read from operator files",
}


def _finish(name, ambient, h, R, params, certify, max_dense_dim) -> FrustrationFreeModel:
    model = FrustrationFreeModel(name, ambient, h, R, params)
    if certify:
        rec = certify_frustration_free(model, [ambient.region], max_dense_dim=max_dense_dim)
        model.certification = rec
    return model


def _bonds(graph: LatticeGraph) -> list[tuple[int, int]]:
    """Nearest-neighbour bonds (x, x + e_axis), anchored at x."""
    out = []
    for x, c in enumerate(graph.coords):
        for ax, (L, per) in enumerate(zip(graph.dims, graph.periodic)):
            nxt = list(c)
            nxt[ax] += 1
            if nxt[ax] >= L:
                if not per or L <= 2:
                    continue
                nxt[ax] %= L
            out.append((x, graph.site_at(nxt)))
    return out


def model_zoo(name: str, N: int | None = None, graph: LatticeGraph | None = None,
              certify: bool = True, max_dim: int = 1 << 16, max_dense_dim: int = 4096,
              **params) -> FrustrationFreeModel:
    if name not in ZOO:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(ZOO)}")
    if graph is None:
        if N is None:
            raise ModelError("give either N or a lattice graph")
        graph = LatticeGraph.chain(N, periodic=(name == "aklt_periodic") or bool(params.get("periodic", False)))
    if name == "paramagnet":
        amb = AmbientVolume.uniform(graph, 2, max_dim=max_dim)
        h = {x: site_operator(amb, PAULI["n_down"].real, [x], hermitian=True) for x in range(graph.n_sites)}
        return _finish(name, amb, h, 0, {}, certify, max_dense_dim)
    if name in ("aklt_open", "aklt_periodic"):
        if name == "aklt_periodic" and not all(graph.periodic):
            raise ModelError("aklt_periodic needs a periodic lattice")
        if name == "aklt_open" and any(graph.periodic):
            raise ModelError("aklt_open needs an open lattice")
        amb = AmbientVolume.uniform(graph, 3, max_dim=max_dim)
        P = aklt_projector()
        h = {x: site_operator(amb, P, [x, y], hermitian=True) for x, y in _bonds(graph)}
        return _finish(name, amb, h, 1, {}, certify, max_dense_dim)
    if name == "ising_projector":
        lam = float(params.get("hopping", 0.5))
        if not 0 <= lam < 1:
            raise ModelError("hopping must lie in [0, 1) to keep the bond term PSD with kernel {uu, dd}")
        amb = AmbientVolume.uniform(graph, 2, max_dim=max_dim)
        B = np.zeros((4, 4))
        B[1, 1] = B[2, 2] = 1.0  # indices 1, 2 are the two anti-aligned pairs
        B[1, 2] = B[2, 1] = -lam
        h = {x: site_operator(amb, B, [x, y], hermitian=True) for x, y in _bonds(graph)}
        return _finish(name, amb, h, 1, {"hopping": lam}, certify, max_dense_dim)
    # custom
    d = int(params.get("d", 2))
    amb = AmbientVolume.uniform(graph, d, max_dim=max_dim)
    R = int(params.get("R", 1))
    h = {}
    for term in params.get("terms", []):
        op = read_operator(term["file"], amb) if "file" in term else site_operator(
            amb, np.asarray(term["matrix"]), term["sites"])
        x = int(term.get("anchor", min(op.support)))
        if not set(op.support) <= ball(graph, x, R):
            raise ModelError(f"custom term at {x} not supported in b_x(R)")
        h[x] = op if x not in h else h[x] + op
    return _finish("custom", amb, h, R, {"R": R, "d": d}, certify, max_dense_dim)


# ---- perturbations ----

def local_matrix(name: str, d: int) -> np.ndarray:
    if d == 2 and name in PAULI:
        return PAULI[name]
    if d == 3:
        ops = spin1_operators()
        if name in ops:
            return ops[name]
    raise ModelError(f"no single-site operator {name!r} for local dimension {d}")


def field_perturbation(ambient: AmbientVolume, matrix: np.ndarray, sites: Iterable[int] | None = None,
                       coefficient: float = 1.0) -> AnchoredInteraction:
    sites = sorted(ambient.region if sites is None else sites)
    terms = {(x, 0): site_operator(ambient, coefficient * np.asarray(matrix), [x]) for x in sites}
    nrm = coefficient * operator_norm(np.asarray(matrix))
    return AnchoredInteraction(terms, 0, strength=abs(nrm), rate=1.0, exponent=1.0)


def bond_perturbation(ambient: AmbientVolume, matrix: np.ndarray, sites: Iterable[int] | None = None,
                      coefficient: float = 1.0) -> AnchoredInteraction:
    """Two-site terms on nearest-neighbour bonds (x, x+e), anchored at (x, 1)."""
    region = frozenset(ambient.region if sites is None else sites)
    terms = {}
    for x, y in _bonds(ambient.graph):
        if x in region and y in region:
            op = site_operator(ambient, coefficient * np.asarray(matrix), [x, y])
            terms[(x, 1)] = op if (x, 1) not in terms else terms[(x, 1)] + op
    nrm = abs(coefficient) * operator_norm(np.asarray(matrix))
    # ||Phi(x,1)|| <= nrm * e^{-1} * e  : declare strength e*nrm at rate 1
    return AnchoredInteraction(terms, 0, strength=nrm * math.e * ambient.graph.nu, rate=1.0, exponent=1.0)


def merge(*phis: AnchoredInteraction) -> AnchoredInteraction:
    terms: dict = {}
    strength = 0.0
    for p in phis:
        for k, op in p.terms.items():
            terms[k] = op if k not in terms else terms[k] + op
        strength += p.strength or 0.0
    return AnchoredInteraction(terms, min((p.R for p in phis), default=0), strength or None, 1.0, 1.0)

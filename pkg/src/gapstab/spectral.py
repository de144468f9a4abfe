"""Dense and Krylov eigensolvers, gaps, kernel dimensions and local-gap tables."""
from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import SeparatingPartitionFamily
from .operators import LocalOperator, operator_norm

KERNEL_REL_TOL = 1e-10
AMBIGUITY_FACTOR = 10.0
RESIDUAL_TOL = 1e-9
ORTHO_TOL = 1e-10
START_SEED = 20240601


class SpectralError(RuntimeError):
    pass


class InsufficientDataError(SpectralError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    fingerprint: str
    complete: bool
    hnorm: float  # operator norm of the source (exact for dense, estimated otherwise)
    max_residual: float = 0.0

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def ground_state(self) -> np.ndarray:
        return self.eigenvectors[:, 0]


def operator_fingerprint(H: LocalOperator) -> str:
    h = hashlib.sha1()
    h.update(repr((H.support, H.dims)).encode())
    M = H.matrix
    if sp.issparse(M):
        C = M.tocsr().copy()
        C.sum_duplicates()
        C.sort_indices()
        h.update(C.indptr.tobytes())
        h.update(C.indices.tobytes())
        h.update(np.ascontiguousarray(C.data).tobytes())
    else:
        h.update(np.ascontiguousarray(M).tobytes())
    h.update(str(M.dtype).encode())
    return h.hexdigest()


class _SpectrumCache:
    def __init__(self, max_bytes: int = 1 << 30):
        self.max_bytes = max_bytes
        self._d: OrderedDict = OrderedDict()
        self._bytes = 0

    def get(self, key):
        val = self._d.get(key)
        if val is not None:
            self._d.move_to_end(key)
        return val

    def put(self, key, val: SpectralData):
        size = val.eigenvectors.nbytes
        if size > self.max_bytes:
            return
        self._d[key] = val
        self._bytes += size
        while self._bytes > self.max_bytes:
            _, old = self._d.popitem(last=False)
            self._bytes -= old.eigenvectors.nbytes

    def clear(self):
        self._d.clear()
        self._bytes = 0


CACHE = _SpectrumCache()


def _check_hermitian(H: LocalOperator) -> None:
    if not H.hermitian:
        M = H.matrix
        dev = abs(M - M.conj().T).max() if H.dim else 0.0
        if dev > 1e-12 * (1 + abs(M).max()):
            raise SpectralError("diagonalize needs a Hermitian operator")


def diagonalize(H: LocalOperator, mode: str = "auto", k: int = 6, max_dense_dim: int = 4096,
                max_iterative_dim: int = 1 << 16, certify: bool | None = None,
                max_restarts: int = 50) -> SpectralData:
    """Eigen-decomposition of a Hermitian operator.

    ``dense`` returns the full spectrum.  ``iterative`` returns the ``k`` lowest
    eigenpairs from implicitly restarted Lanczos (ARPACK) with a seeded start
    vector; residuals are certified against 1e-9 * ||H||.
    """
    _check_hermitian(H)
    D = H.dim
    if mode == "auto":
        mode = "dense" if D <= max_dense_dim else "iterative"
    key = (operator_fingerprint(H), mode, k if mode == "iterative" else None)
    hit = CACHE.get(key)
    if hit is not None:
        return hit
    if mode == "dense":
        if D > max_dense_dim:
            raise SpectralError(f"dimension {D} above the dense cap {max_dense_dim}")
        w, V = np.linalg.eigh(H.dense())
        hnorm = float(max(abs(w[0]), abs(w[-1]))) if D else 0.0
        res = 0.0
        if certify or (certify is None and D <= 512):
            res = _max_residual(H.matrix, w, V)
            _assert_quality(res, hnorm, V)
        out = SpectralData(w, V, key[0], True, hnorm, res)
    elif mode == "iterative":
        if k < 2:
            raise SpectralError("iterative mode needs k >= 2")
        if D > max_iterative_dim:
            raise SpectralError(f"dimension {D} above the iterative cap {max_iterative_dim}")
        if k >= D - 1:
            return diagonalize(H, "dense", max_dense_dim=max(D, max_dense_dim))
        M = H.matrix if sp.issparse(H.matrix) else np.asarray(H.matrix)
        v0 = np.random.default_rng(START_SEED).standard_normal(D)
        if np.iscomplexobj(M):
            v0 = v0 + 0j
        hnorm = operator_norm(H)
        try:
            w, V = spla.eigsh(M, k=k, which="SA", v0=v0, tol=0.0, ncv=min(D, max(4 * k + 1, 40)),
                              maxiter=max_restarts * D)
        except spla.ArpackNoConvergence as exc:
            raise SpectralError(f"Krylov iteration did not converge: {exc}") from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]
        res = _max_residual(M, w, V)
        _assert_quality(res, hnorm, V)
        out = SpectralData(w, V, key[0], False, hnorm, res)
    else:
        raise SpectralError(f"unknown mode {mode!r}")
    CACHE.put(key, out)
    return out


def _max_residual(M, w, V) -> float:
    if V.size == 0:
        return 0.0
    R = M @ V - V * w[None, :]
    return float(np.max(np.linalg.norm(R, axis=0)))


def _assert_quality(res: float, hnorm: float, V: np.ndarray) -> None:
    if res > RESIDUAL_TOL * max(hnorm, 1.0):
        raise SpectralError(f"eigenpair residual {res:.3e} above tolerance")
    k = V.shape[1]
    if k and k <= 4096:
        ortho = float(np.abs(V.conj().T @ V - np.eye(k)).max())
        if ortho > ORTHO_TOL:
            raise SpectralError(f"eigenvectors not orthonormal ({ortho:.3e})")


def kernel_tolerance(spec: SpectralData) -> float:
    return KERNEL_REL_TOL * (1.0 + spec.hnorm)


@dataclass
class GapFragment:
    E: float
    multiplicity: int
    gap: float | None  # None: spectrum exhausted by the ground cluster
    ambiguous: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {"E": self.E, "multiplicity": self.multiplicity, "gap": self.gap,
                "ambiguous": self.ambiguous, "tolerance": self.tolerance}


def gap_above_ground(spec: SpectralData, kernel_tol: float | None = None) -> GapFragment:
    tol = kernel_tolerance(spec) if kernel_tol is None else kernel_tol
    w = spec.eigenvalues
    if len(w) == 0:
        raise InsufficientDataError("no eigenvalues")
    E = float(w[0])
    mult = int(np.count_nonzero(w <= E + tol))
    if mult == len(w):
        if not spec.complete:
            raise InsufficientDataError(f"all {len(w)} computed eigenvalues lie in the ground cluster")
        return GapFragment(E, mult, None, False, tol)
    gap = float(w[mult] - E)
    cluster_top = float(w[mult - 1])
    ambiguous = (w[mult] - cluster_top) < AMBIGUITY_FACTOR * tol
    return GapFragment(E, mult, gap, bool(ambiguous), tol)


def kernel_dimension(spec: SpectralData, kernel_tol: float | None = None) -> int:
    tol = kernel_tolerance(spec) if kernel_tol is None else kernel_tol
    w = spec.eigenvalues
    if abs(w[0]) > tol:
        return 0
    frag = gap_above_ground(spec, tol)
    return frag.multiplicity


@dataclass
class GapReport:
    E: float | None
    multiplicity: int | None
    gap: float | None
    gamma_table: dict  # n -> measured min nonzero eigenvalue over Lambda(x, n)
    gamma1: float | None
    alpha: float | None
    passed: bool
    per_scale: dict = field(default_factory=dict)
    fitted: bool = True

    def to_dict(self) -> dict:
        return {"E": self.E, "multiplicity": self.multiplicity, "gap": self.gap,
                "gamma_table": {str(n): v for n, v in sorted(self.gamma_table.items())},
                "gamma1": self.gamma1, "alpha": self.alpha, "passed": self.passed,
                "fitted": self.fitted, "per_scale": self.per_scale}


def smallest_nonzero(spec: SpectralData, tol: float | None = None) -> float:
    """Lowest eigenvalue above the zero cluster; +inf when the spectrum is {0}."""
    tol = kernel_tolerance(spec) if tol is None else tol
    w = spec.eigenvalues
    above = w[w > tol]
    if above.size == 0:
        if not spec.complete:
            raise InsufficientDataError("no nonzero eigenvalue among the computed ones")
        return math.inf
    return float(above[0])


def certify_local_gaps(model, family: SeparatingPartitionFamily, gamma1: float | None = None,
                       alpha: float | None = None, max_dense_dim: int = 4096,
                       max_iterative_dim: int = 1 << 16) -> GapReport:
    """Measure gamma(n) = min_x (lowest nonzero eigenvalue of H_{Lambda(x,n)}) for n >= R."""
    from .models import assemble_hamiltonian

    table: dict = {}
    per_scale: dict = {}
    seen: dict = {}
    for n in family.scales:
        if n < model.R:
            continue
        vals = []
        shapes = set()
        zero_ok = True
        for x in range(model.graph.n_sites):
            H = assemble_hamiltonian(model, family.region(x, n))
            fp = operator_fingerprint(H)
            shapes.add(fp)
            if fp not in seen:
                if H.dim <= max_dense_dim:
                    spec = diagonalize(H, "dense", max_dense_dim=max_dense_dim)
                else:
                    spec = diagonalize(H, "iterative", k=12, max_iterative_dim=max_iterative_dim)
                tol = kernel_tolerance(spec)
                seen[fp] = (smallest_nonzero(spec, tol), abs(float(spec.eigenvalues[0])) <= tol)
            g, has_zero = seen[fp]
            vals.append(g)
            zero_ok &= has_zero
        table[n] = min(vals)
        per_scale[str(n)] = {"gamma": table[n], "zero_in_spectrum": zero_ok,
                             "distinct_shapes": len(shapes)}
    fitted = gamma1 is None or alpha is None
    finite = {n: g for n, g in table.items() if math.isfinite(g)}
    if fitted:
        pts = [(math.log(max(n, 1)), math.log(g)) for n, g in finite.items() if n >= 1 and g > 0]
        if len(pts) >= 2:
            xs, ys = np.array(pts).T
            slope = float(np.polyfit(xs, ys, 1)[0]) if np.ptp(xs) > 0 else 0.0
            alpha = max(0.0, -slope)
        else:
            alpha = 0.0
        gamma1 = min((g * max(n, 1) ** alpha for n, g in finite.items()), default=math.inf)
    passed = True
    for n, g in table.items():
        need = gamma1 * max(n, 1) ** (-alpha)
        ok = g >= need * (1 - 1e-12)
        per_scale[str(n)]["required"] = need
        per_scale[str(n)]["passed"] = ok
        passed &= ok
    return GapReport(None, None, None, table, gamma1, alpha, passed, per_scale, fitted)

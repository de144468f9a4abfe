"""Tensor-product observable algebra over a finite ambient volume.

Matrix layout: the sites of a support are taken in ascending order and the
basis index is mixed-radix little-endian over that order, so the first
(smallest) site is the least significant digit.  Everything is built from
``config_offsets``, which maps the configurations of a sub-collection of
sites to their index offsets inside a larger collection.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import LatticeGraph, ball

HERMITIAN_TOL = 1e-12
SUPPORT_TOL = 1e-12
DENSE_EMBED_LIMIT = 4096
LANCZOS_NORM_DIM = 600


class OperatorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AmbientVolume:
    graph: LatticeGraph
    site_dims: tuple[int, ...]  # indexed by site
    region: frozenset = field(default=None)
    max_dim: int = 1 << 16

    def __post_init__(self):
        if len(self.site_dims) != self.graph.n_sites:
            raise OperatorError("need one local dimension per lattice site")
        if any(d < 2 for d in self.site_dims):
            raise OperatorError("local dimensions must be >= 2")
        if self.region is None:
            object.__setattr__(self, "region", self.graph.sites)
        if self.dim > self.max_dim:
            raise OperatorError(f"ambient dimension {self.dim} exceeds cap {self.max_dim}")

    @classmethod
    def uniform(cls, graph: LatticeGraph, d: int, max_dim: int = 1 << 16) -> "AmbientVolume":
        return cls(graph, (d,) * graph.n_sites, max_dim=max_dim)

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(sorted(self.region))

    @property
    def dim(self) -> int:
        return self.dim_of(self.region)

    def dim_of(self, region: Iterable[int]) -> int:
        return math.prod(self.site_dims[x] for x in region)

    def dims_of(self, sites: Sequence[int]) -> tuple[int, ...]:
        return tuple(self.site_dims[x] for x in sites)


def config_offsets(sub: Sequence[int], full: Sequence[int], dims: dict | Sequence[int]) -> np.ndarray:
    """Offsets in the index of ``full`` of every configuration of ``sub``.

    Entry ``p`` corresponds to the configuration of ``sub`` with little-endian
    index ``p``; the remaining sites of ``full`` are in their zero state.
    """
    stride = {}
    acc = 1
    for y in full:
        stride[y] = acc
        acc *= dims[y]
    offs = np.zeros(1, dtype=np.int64)
    for y in sub:
        steps = np.arange(dims[y], dtype=np.int64) * stride[y]
        offs = (offs[None, :] + steps[:, None]).ravel()
    return offs


def _is_sparse(M) -> bool:
    return sp.issparse(M)


@dataclass(frozen=True, eq=False)
class LocalOperator:
    matrix: object  # ndarray or scipy sparse matrix
    support: tuple[int, ...]
    ambient: AmbientVolume
    hermitian: bool = False

    def __post_init__(self):
        sup = tuple(sorted(int(x) for x in self.support))
        object.__setattr__(self, "support", sup)
        if not set(sup) <= self.ambient.region:
            raise OperatorError(f"support {sup} not inside the ambient region")
        D = self.ambient.dim_of(sup)
        if self.matrix.shape != (D, D):
            raise OperatorError(f"matrix shape {self.matrix.shape} does not match support dimension {D}")
        if self.hermitian:
            M = self.matrix
            dev = abs(M - M.conj().T).max() if D else 0.0
            scale = 1.0 + (abs(M).max() if D else 0.0)
            if dev > HERMITIAN_TOL * scale:
                raise OperatorError(f"operator flagged Hermitian deviates by {dev:.3e}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.ambient.dims_of(self.support)

    @property
    def is_sparse(self) -> bool:
        return _is_sparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def norm(self) -> float:
        return operator_norm(self)

    def dagger(self) -> "LocalOperator":
        return LocalOperator(self.matrix.conj().T, self.support, self.ambient, self.hermitian)

    def with_matrix(self, M, hermitian: bool | None = None) -> "LocalOperator":
        return LocalOperator(M, self.support, self.ambient, self.hermitian if hermitian is None else hermitian)

    def _binary(self, other: "LocalOperator"):
        if other.ambient is not self.ambient:
            raise OperatorError("operators live in different ambient volumes")
        union = tuple(sorted(set(self.support) | set(other.support)))
        return embed(self, union).matrix, embed(other, union).matrix, union

    def __add__(self, other: "LocalOperator") -> "LocalOperator":
        a, b, u = self._binary(other)
        return LocalOperator(a + b, u, self.ambient, self.hermitian and other.hermitian)

    def __sub__(self, other: "LocalOperator") -> "LocalOperator":
        a, b, u = self._binary(other)
        return LocalOperator(a - b, u, self.ambient, self.hermitian and other.hermitian)

    def __matmul__(self, other: "LocalOperator") -> "LocalOperator":
        a, b, u = self._binary(other)
        return LocalOperator(a @ b, u, self.ambient)

    def __mul__(self, c) -> "LocalOperator":
        herm = self.hermitian and np.isreal(c)
        return LocalOperator(self.matrix * c, self.support, self.ambient, bool(herm))

    __rmul__ = __mul__

    def __neg__(self) -> "LocalOperator":
        return self * -1.0


def zero_operator(ambient: AmbientVolume, support: Iterable[int] = ()) -> LocalOperator:
    sup = tuple(sorted(support))
    D = ambient.dim_of(sup)
    return LocalOperator(np.zeros((D, D)), sup, ambient, hermitian=True)


def identity_operator(ambient: AmbientVolume, support: Iterable[int] = ()) -> LocalOperator:
    sup = tuple(sorted(support))
    return LocalOperator(np.eye(ambient.dim_of(sup)), sup, ambient, hermitian=True)


def site_operator(ambient: AmbientVolume, M, sites: Sequence[int], hermitian: bool | None = None) -> LocalOperator:
    """Wrap a matrix given in the tensor order of ``sites`` (first = least significant).

    ``sites`` may be in any order; the matrix is permuted into ascending order.
    """
    M = np.asarray(M)
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise OperatorError("repeated site")
    target = sorted(sites)
    if sites != target:
        M = permute_sites(M, sites, target, ambient.site_dims)
    if hermitian is None:
        hermitian = bool(np.allclose(M, M.conj().T, atol=HERMITIAN_TOL, rtol=0))
    return LocalOperator(M, tuple(target), ambient, hermitian)


def permute_sites(M: np.ndarray, order_from: Sequence[int], order_to: Sequence[int], dims) -> np.ndarray:
    """Reorder the tensor factors of M from one site order to another."""
    k = len(order_from)
    # C-order reshape puts the most significant (last) site first
    shape = [dims[s] for s in reversed(order_from)]
    T = M.reshape(shape + shape)
    pos = {s: k - 1 - i for i, s in enumerate(order_from)}
    perm = [pos[s] for s in reversed(order_to)]
    T = T.transpose(perm + [p + k for p in perm])
    D = M.shape[0]
    return T.reshape(D, D)


def embed(A: LocalOperator, target: Iterable[int], sparse: bool | None = None) -> LocalOperator:
    T = tuple(sorted(int(x) for x in target))
    if not set(A.support) <= set(T):
        raise OperatorError(f"support {A.support} not contained in target {T}")
    if not set(T) <= A.ambient.region:
        raise OperatorError("target outside the ambient region")
    if T == A.support:
        return A
    dims = A.ambient.site_dims
    rest = [y for y in T if y not in set(A.support)]
    oS = config_offsets(A.support, T, dims)
    oR = config_offsets(rest, T, dims)
    D = A.ambient.dim_of(T)
    if sparse is None:
        sparse = A.is_sparse or D > DENSE_EMBED_LIMIT
    if sparse:
        C = sp.coo_matrix(A.matrix)
        rows = (oR[:, None] + oS[C.row][None, :]).ravel()
        cols = (oR[:, None] + oS[C.col][None, :]).ravel()
        data = np.tile(C.data, len(oR))
        M = sp.csr_matrix((data, (rows, cols)), shape=(D, D))
    else:
        M = np.zeros((D, D), dtype=np.result_type(A.matrix.dtype, np.float64))
        idx = oR[:, None] + oS[None, :]
        M[idx[:, :, None], idx[:, None, :]] = A.dense()[None, :, :]
    return LocalOperator(M, T, A.ambient, A.hermitian)


def commutator(A: LocalOperator, B: LocalOperator) -> LocalOperator:
    if A.ambient is not B.ambient:
        raise OperatorError("ambient mismatch")
    a, b, u = A._binary(B)
    return LocalOperator(a @ b - b @ a, u, A.ambient)


def conditional_expectation(A: LocalOperator, X: Iterable[int]) -> LocalOperator:
    """Normalized partial trace onto the sites of X."""
    X = frozenset(int(x) for x in X)
    if not X <= A.ambient.region:
        raise OperatorError("region outside the ambient volume")
    keep = tuple(y for y in A.support if y in X)
    if keep == A.support:
        return A
    traced = [y for y in A.support if y not in X]
    dims = A.ambient.site_dims
    oK = config_offsets(keep, A.support, dims)
    oT = config_offsets(traced, A.support, dims)
    dT = len(oT)
    if A.is_sparse:
        M = A.matrix.tocsr()
        acc = np.zeros((len(oK), len(oK)), dtype=np.result_type(M.dtype, np.float64))
        for t in oT:
            ix = oK + t
            acc += M[ix][:, ix].toarray()
        out = acc / dT
    else:
        idx = oK[:, None] + oT[None, :]
        M = A.dense()
        out = M[idx[:, None, :], idx[None, :, :]].sum(axis=2) / dT
    return LocalOperator(out, keep, A.ambient, A.hermitian)


def delta_layer(A: LocalOperator, x: int, k: int, n: int) -> LocalOperator:
    """Delta^n_{b_x(k)}(A): Pi_{b_x(k)}(A) for n == k, else Pi_{b_x(n)}(A) - Pi_{b_x(n-1)}(A)."""
    if n < k:
        raise OperatorError(f"layer index {n} below base radius {k}")
    g = A.ambient.graph
    outer = conditional_expectation(A, ball(g, x, n))
    if n == k:
        return outer
    inner = conditional_expectation(A, ball(g, x, n - 1))
    return outer - inner


def operator_norm(A: LocalOperator | np.ndarray, hermitian: bool | None = None) -> float:
    if isinstance(A, LocalOperator):
        M, herm = A.matrix, A.hermitian if hermitian is None else hermitian
    else:
        M, herm = A, bool(hermitian)
    if M.shape[0] == 0:
        return 0.0
    if _is_sparse(M):
        if M.nnz == 0:
            return 0.0
        if M.shape[0] <= 512:
            return operator_norm(M.toarray(), herm)
        if herm:
            return lanczos_norm(M)
        v0 = np.random.default_rng(0).standard_normal(M.shape[0])
        s = spla.svds(M, k=1, v0=v0, return_singular_vectors=False, tol=1e-13)
        return float(s[0])
    M = np.asarray(M)
    if not np.any(M):
        return 0.0
    if herm:
        if M.shape[0] >= LANCZOS_NORM_DIM:
            return lanczos_norm(M)
        w = np.linalg.eigvalsh(M)
        return float(max(abs(w[0]), abs(w[-1])))
    return float(np.linalg.norm(M, 2))


def lanczos_norm(M, tol: float = 1e-14) -> float:
    """Operator norm of a Hermitian matrix (dense or sparse) via Lanczos on M^2.

    Squaring merges +/- lambda pairs, which otherwise stall a largest-magnitude search.
    """
    n = M.shape[0]
    dtype = np.result_type(M.dtype, np.float64)
    op = spla.LinearOperator((n, n), matvec=lambda v: M @ (M @ v), dtype=dtype)
    v0 = np.random.default_rng(0).standard_normal(n).astype(dtype)
    w = spla.eigsh(op, k=1, which="LA", v0=v0, return_eigenvectors=False, tol=tol)
    return float(math.sqrt(max(w[0], 0.0)))


def tighten_support(A: LocalOperator, tol: float = SUPPORT_TOL) -> LocalOperator:
    """Drop every site y with ||A - Pi_{S minus y}(A)|| <= tol."""
    cur = A
    changed = True
    while changed and cur.support:
        changed = False
        for y in cur.support:
            reduced = conditional_expectation(cur, set(cur.support) - {y})
            if operator_norm(cur - embed(reduced, cur.support)) <= tol:
                cur = reduced
                changed = True
                break
    return cur


def support_is_tight(A: LocalOperator, tol: float = SUPPORT_TOL) -> bool:
    for y in A.support:
        reduced = conditional_expectation(A, set(A.support) - {y})
        if operator_norm(A - embed(reduced, A.support)) <= tol:
            return False
    return True


# operator file format: a JSON header line, then little-endian float64 pairs (re, im), row-major

_MAGIC = b"GAPSTAB-OP 1\n"


def write_operator(path, A: LocalOperator) -> None:
    header = {"support": list(A.support), "dims": list(A.dims)}
    data = np.ascontiguousarray(A.dense(), dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data.astype("<c16").tobytes(order="C"))


def read_matrix_file(path) -> tuple[list[int], list[int], np.ndarray]:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise OperatorError(f"{path}: not an operator file")
        header = json.loads(fh.readline())
        raw = fh.read()
    support, dims = list(header["support"]), list(header["dims"])
    D = math.prod(dims)
    arr = np.frombuffer(raw, dtype="<c16")
    if arr.size != D * D:
        raise OperatorError(f"{path}: expected {D * D} entries, found {arr.size}")
    return support, dims, arr.reshape(D, D).astype(np.complex128)


def read_operator(path, ambient: AmbientVolume) -> LocalOperator:
    support, dims, M = read_matrix_file(path)
    if tuple(dims) != ambient.dims_of(support):
        raise OperatorError(f"{path}: local dimensions {dims} disagree with the ambient volume")
    return site_operator(ambient, M, support)

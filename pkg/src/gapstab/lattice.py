"""Finite lattices with integer graph metrics, balls, inflations and
separating partition families.

Sites are integers ``0..n_sites-1``.  For a box of side lengths ``dims`` the
site index is little-endian in the coordinates (the first axis varies
fastest), so a chain of length ``N`` has site ``i`` at coordinate ``(i,)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

Region = frozenset  # frozenset[int]; always a subset of a graph's sites


class LatticeError(ValueError):
    pass


class ScaleTooLargeError(LatticeError):
    pass


@dataclass(frozen=True, eq=False)
class LatticeGraph:
    dims: tuple[int, ...]
    periodic: tuple[bool, ...]
    kappa_override: float | None = None
    coords: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    dist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.dims) != len(self.periodic) or not self.dims:
            raise LatticeError("dims and periodic must have the same nonzero length")
        if any(L < 1 for L in self.dims):
            raise LatticeError(f"side lengths must be positive, got {self.dims}")
        coords = [tuple(reversed(c)) for c in itertools.product(*(range(L) for L in reversed(self.dims)))]
        object.__setattr__(self, "coords", tuple(coords))
        C = np.array(coords, dtype=np.int64)
        d = np.zeros((len(coords), len(coords)), dtype=np.int64)
        for ax, (L, per) in enumerate(zip(self.dims, self.periodic)):
            diff = np.abs(C[:, None, ax] - C[None, :, ax])
            if per:
                diff = np.minimum(diff, L - diff)
            d += diff
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)

    # constructors
    @classmethod
    def chain(cls, n: int, periodic: bool = False) -> "LatticeGraph":
        return cls((n,), (periodic,))

    @classmethod
    def torus(cls, dims: Sequence[int]) -> "LatticeGraph":
        return cls(tuple(dims), (True,) * len(dims))

    @classmethod
    def box(cls, dims: Sequence[int], periodic: bool | Sequence[bool] = False) -> "LatticeGraph":
        if isinstance(periodic, bool):
            periodic = (periodic,) * len(dims)
        return cls(tuple(dims), tuple(periodic))

    @property
    def n_sites(self) -> int:
        return len(self.coords)

    @property
    def sites(self) -> Region:
        return frozenset(range(self.n_sites))

    @property
    def nu(self) -> int:
        return len(self.dims)

    @property
    def diameter(self) -> int:
        return int(self.dist.max())

    def distance(self, x: int, y: int) -> int:
        self._check(x)
        self._check(y)
        return int(self.dist[x, y])

    def site_at(self, coord: Sequence[int]) -> int:
        idx, stride = 0, 1
        for c, L, per in zip(coord, self.dims, self.periodic):
            if per:
                c %= L
            if not 0 <= c < L:
                raise LatticeError(f"coordinate {tuple(coord)} outside the box")
            idx += c * stride
            stride *= L
        return idx

    def eccentricity(self, x: int) -> int:
        return int(self.dist[x].max())

    @property
    def kappa(self) -> float:
        """Tight regularity constant max_{x, n>=1} |b_x(n)| / n^nu."""
        if self.kappa_override is not None:
            return float(self.kappa_override)
        best = 1.0 if self.n_sites else 0.0
        for n in range(1, max(self.diameter, 1) + 1):
            counts = (self.dist <= n).sum(axis=1)
            best = max(best, float(counts.max()) / n ** self.nu)
        return best

    def _check(self, x: int) -> None:
        if not (isinstance(x, (int, np.integer)) and 0 <= x < self.n_sites):
            raise LatticeError(f"unknown site {x!r}")

    def check_region(self, region: Iterable[int]) -> Region:
        r = frozenset(int(x) for x in region)
        for x in r:
            self._check(x)
        return r

    def describe(self) -> dict:
        return {"dims": list(self.dims), "periodic": list(self.periodic), "nu": self.nu}


def ball(graph: LatticeGraph, x: int, n: int) -> Region:
    graph._check(x)
    if n < 0:
        raise LatticeError("radius must be non-negative")
    return frozenset(np.flatnonzero(graph.dist[x] <= n).tolist())


def inflate(graph: LatticeGraph, region: Iterable[int], n: int) -> Region:
    region = graph.check_region(region)
    if not region:
        raise LatticeError("cannot inflate an empty region")
    if n < 0:
        raise LatticeError("radius must be non-negative")
    rows = graph.dist[sorted(region)]
    return frozenset(np.flatnonzero((rows <= n).any(axis=0)).tolist())


def linf_ball(graph: LatticeGraph, x: int, n: int) -> Region:
    """Sup-norm ball of radius n around x (clipped or wrapped per axis)."""
    graph._check(x)
    c = graph.coords[x]
    axes = []
    for ax, (L, per) in enumerate(zip(graph.dims, graph.periodic)):
        if per:
            vals = {(c[ax] + k) % L for k in range(-n, n + 1)}
        else:
            vals = {v for v in range(c[ax] - n, c[ax] + n + 1) if 0 <= v < L}
        axes.append(sorted(vals))
    return frozenset(graph.site_at(p) for p in itertools.product(*axes))


ShapeRule = Callable[[LatticeGraph, int, int], Region]


@dataclass(frozen=True)
class PartitionSlice:
    n: int
    classes: tuple[Region, ...]
    regions: dict  # site -> Region, the family member Lambda(x, n)
    kind: str = "residue"


@dataclass(frozen=True)
class SeparatingPartitionFamily:
    graph: LatticeGraph
    slices: dict  # n -> PartitionSlice
    c: float
    zeta: float

    @property
    def scales(self) -> list[int]:
        return sorted(self.slices)

    def n_classes(self, n: int) -> int:
        return len(self.slices[n].classes)

    def region(self, x: int, n: int) -> Region:
        return self.slices[n].regions[x]


def _axis_colors(L: int, periodic: bool, n: int) -> list[int]:
    """Color of each coordinate along one axis at scale n."""
    w = 2 * n + 1
    if not periodic or L % w == 0:
        return [i % w for i in range(L)]
    if L < w:
        raise ScaleTooLargeError(f"side length {L} < 2n+1 = {w}")
    # periodic, not divisible: q blocks of near-equal size >= w, colored by offset
    q = L // w
    base, extra = divmod(L, q)
    colors = []
    for b in range(q):
        colors.extend(range(base + (1 if b < extra else 0)))
    return colors


def separating_partition_zv(graph: LatticeGraph, n: int, shape: ShapeRule | None = None) -> PartitionSlice:
    if n < 0:
        raise LatticeError("scale must be non-negative")
    for L, per in zip(graph.dims, graph.periodic):
        if per and L < 2 * n + 1:
            raise ScaleTooLargeError(f"periodic side length {L} < 2n+1 = {2 * n + 1}")
    shape = shape or linf_ball
    colors = [_axis_colors(L, per, n) for L, per in zip(graph.dims, graph.periodic)]
    groups: dict[tuple, set] = {}
    for x, c in enumerate(graph.coords):
        key = tuple(colors[ax][c[ax]] for ax in range(graph.nu))
        groups.setdefault(key, set()).add(x)
    classes = tuple(frozenset(groups[k]) for k in sorted(groups))
    regions = {x: shape(graph, x, n) for x in range(graph.n_sites)}
    return PartitionSlice(n, classes, regions, "residue")


def singleton_partition(graph: LatticeGraph, n: int, shape: ShapeRule | None = None) -> PartitionSlice:
    shape = shape or linf_ball
    classes = tuple(frozenset({x}) for x in range(graph.n_sites))
    regions = {x: shape(graph, x, n) for x in range(graph.n_sites)}
    return PartitionSlice(n, classes, regions, "singleton")


def growth_constant(slices: dict, zeta: float) -> float:
    c = 0.0
    for n, sl in slices.items():
        if n >= 1:
            c = max(c, len(sl.classes) / n ** zeta)
    return c


def partition_family(graph: LatticeGraph, n_max: int, zeta: float | None = None,
                     c: float | None = None, shape: ShapeRule | None = None,
                     fallback: bool = True) -> SeparatingPartitionFamily:
    """Residue-class family for n = 0..n_max.

    Scales too large for the periodic residue construction fall back to the
    singleton partition when ``fallback`` is set (separation then holds
    vacuously), otherwise they raise.
    """
    zeta = float(graph.nu if zeta is None else zeta)
    slices = {}
    for n in range(n_max + 1):
        try:
            slices[n] = separating_partition_zv(graph, n, shape)
        except ScaleTooLargeError:
            if not fallback:
                raise
            slices[n] = singleton_partition(graph, n, shape)
    c_val = growth_constant(slices, zeta) if c is None else float(c)
    return SeparatingPartitionFamily(graph, slices, c_val, zeta)


@dataclass
class CertificationRecord:
    passed: bool
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks, "notes": list(self.notes)}


def verify_separation(family: SeparatingPartitionFamily) -> CertificationRecord:
    g = family.graph
    everything = g.sites
    per_scale = {}
    ok_all = True
    for n in family.scales:
        sl = family.slices[n]
        covered = set()
        disjoint = True
        for cl in sl.classes:
            if covered & cl:
                disjoint = False
            covered |= cl
        is_partition = disjoint and covered == set(everything)
        n_cls = len(sl.classes)
        growth = True if n == 0 else n_cls <= family.c * n ** family.zeta * (1 + 1e-12)
        separated = True
        for cl in sl.classes:
            members = sorted(cl)
            for i, x in enumerate(members):
                rx = sl.regions[x]
                for y in members[i + 1:]:
                    if rx & sl.regions[y]:
                        separated = False
                        break
                if not separated:
                    break
            if not separated:
                break
        anchored = all(ball(g, x, n) <= sl.regions[x] for x in range(g.n_sites))
        ok = is_partition and growth and separated and anchored
        ok_all &= ok
        per_scale[str(n)] = {
            "partition": is_partition, "growth": growth, "separation": separated,
            "anchoring": anchored, "n_classes": n_cls, "kind": sl.kind, "passed": ok,
        }
    return CertificationRecord(ok_all, {"scales": per_scale, "c": family.c, "zeta": family.zeta})

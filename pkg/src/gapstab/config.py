"""Experiment configuration: TOML document -> validated dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .models import ZOO


class ConfigError(ValueError):
    pass


@dataclass
class LatticeSpec:
    dims: list = field(default_factory=lambda: [6])
    periodic: Any = False  # bool or one bool per axis

    def periodic_axes(self) -> list:
        if isinstance(self.periodic, bool):
            return [self.periodic] * len(self.dims)
        return [bool(p) for p in self.periodic]


@dataclass
class ModelSpec:
    name: str = "paramagnet"
    params: dict = field(default_factory=dict)


@dataclass
class TermSpec:
    kind: str = "field"  # "field" | "bond" | "file"
    op: str | None = None  # single-site name, e.g. "sx" (d=2) or "Sz" (d=3)
    ops: list | None = None  # bonds: [op on x, op on y]
    matrix: list | None = None
    matrix_imag: list | None = None
    sites: list | None = None
    coefficient: float = 1.0
    file: str | None = None
    anchor: int | None = None
    radius: int | None = None


@dataclass
class PerturbationSpec:
    terms: list = field(default_factory=list)
    strength: float | None = None
    rate: float | None = None
    exponent: float | None = None


@dataclass
class LtqoSpec:
    enabled: bool = True
    basis: str = "full"
    samples: int = 64
    sites: list | None = None
    m_max: int | None = None
    exclude_clipped: bool = True
    indistinguishability: bool = True


@dataclass
class WeightSpec:
    gamma: float = 0.5
    profile: str = "autocorr"
    table: list = field(default_factory=list)


@dataclass
class PartitionSpec:
    zeta: float | None = None  # default: lattice dimension
    c: float | None = None  # default: measured growth constant


@dataclass
class StabilitySpec:
    gamma: float | None = None  # requested gap; default: the weight gamma
    s_grid: list = field(default_factory=lambda: [0.0])
    calibration_s: float | None = None  # default: smallest nonzero grid point
    lambda_region: list | None = None  # default: the whole ambient volume
    sweep_points: int = 11
    drift_sizes: list = field(default_factory=list)


@dataclass
class SolverSpec:
    max_dense_dim: int = 4096
    max_iterative_dim: int = 1 << 16
    flow_step: float = 0.005
    max_halvings: int = 6


@dataclass
class Tolerances:
    frustration_free: float = 1e-10
    nesting: float = 1e-10
    ltqo_zero: float = 1e-12
    f_ground_commutation: float = 1e-8
    transport: float = 1e-6
    unitarity: float = 1e-9
    spectrum_preservation: float = 1e-9
    ground_expectation: float = 1e-8
    phi1_reconstruction: float = 1e-7
    phi2_reconstruction: float = 1e-6
    annihilation: float = 1e-8
    layer_orthogonality: float = 1e-8
    form_bound: float = 1e-8
    sweep: float = 1e-8


_SECTIONS = {
    "lattice": LatticeSpec, "model": ModelSpec, "perturbation": PerturbationSpec, "ltqo": LtqoSpec,
    "weight": WeightSpec, "partitions": PartitionSpec, "stability": StabilitySpec,
    "solver": SolverSpec, "tolerances": Tolerances,
}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    ltqo: LtqoSpec = field(default_factory=LtqoSpec)
    weight: WeightSpec = field(default_factory=WeightSpec)
    partitions: PartitionSpec = field(default_factory=PartitionSpec)
    stability: StabilitySpec = field(default_factory=StabilitySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    tolerances: Tolerances = field(default_factory=Tolerances)
    base_dir: str = field(default=".", compare=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "ExperimentConfig":
        data = dict(data)
        kw: dict = {"base_dir": str(base_dir)}
        for key in ("name", "seed"):
            if key in data:
                kw[key] = data.pop(key)
        for key, typ in _SECTIONS.items():
            if key in data:
                kw[key] = _build(typ, data.pop(key), key)
        if data:
            raise ConfigError(f"unknown top-level keys: {sorted(data)}")
        cfg = cls(**kw)
        if isinstance(cfg.perturbation.terms, list):
            cfg.perturbation.terms = [t if isinstance(t, TermSpec) else _build(TermSpec, t, "perturbation.terms")
                                      for t in cfg.perturbation.terms]
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data, base_dir=str(path.parent))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"lattice.dims": [4]})``."""
        d = self.to_dict()
        for path, val in changes.items():
            node = d
            *head, last = path.split(".")
            for h in head:
                node = node[h]
            node[last] = val
        return ExperimentConfig.from_dict(d, self.base_dir)

    @property
    def requested_gamma(self) -> float:
        return self.weight.gamma if self.stability.gamma is None else self.stability.gamma

    def local_dim(self) -> int:
        name = self.model.name
        if name in ("aklt_open", "aklt_periodic"):
            return 3
        if name == "custom":
            return int(self.model.params.get("d", 2))
        return 2

    def validate(self) -> None:
        lat = self.lattice
        if not lat.dims or any(not isinstance(L, int) or L < 1 for L in lat.dims):
            raise ConfigError("lattice.dims must be a list of positive integers")
        if len(lat.periodic_axes()) != len(lat.dims):
            raise ConfigError("lattice.periodic needs one entry per axis")
        n_sites = math.prod(lat.dims)
        if self.model.name not in ZOO:
            raise ConfigError(f"unknown model {self.model.name!r}; choose from {sorted(ZOO)}")
        dim = self.local_dim() ** n_sites
        sv = self.solver
        if dim > sv.max_iterative_dim:
            raise ConfigError(f"ambient dimension {dim} exceeds solver.max_iterative_dim {sv.max_iterative_dim}")
        if len(self.stability.s_grid) > 1 and dim > sv.max_dense_dim:
            raise ConfigError(f"the spectral flow needs dense spectra; ambient dimension {dim} "
                              f"exceeds solver.max_dense_dim {sv.max_dense_dim}")
        sites = set(range(n_sites))
        for t in self.perturbation.terms:
            if t.kind not in ("field", "bond", "file"):
                raise ConfigError(f"unknown perturbation kind {t.kind!r}")
            if t.sites is not None and not set(t.sites) <= sites:
                raise ConfigError(f"perturbation sites {t.sites} outside the lattice")
            if t.kind == "file" and not t.file:
                raise ConfigError("file perturbation terms need 'file'")
            if t.kind in ("field", "bond") and t.op is None and t.ops is None and t.matrix is None:
                raise ConfigError(f"{t.kind} term needs 'op', 'ops' or 'matrix'")
        st = self.stability
        if st.lambda_region is not None and not set(st.lambda_region) <= sites:
            raise ConfigError("stability.lambda_region outside the lattice")
        grid = [float(s) for s in st.s_grid]
        if not grid or grid[0] != 0.0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("stability.s_grid must start at 0 and strictly increase")
        if st.calibration_s is not None and float(st.calibration_s) not in grid:
            raise ConfigError("stability.calibration_s must be a grid point")
        if st.sweep_points < 2:
            raise ConfigError("stability.sweep_points must be at least 2")
        if any(not isinstance(L, int) or L < 2 for L in st.drift_sizes):
            raise ConfigError("stability.drift_sizes must be integers >= 2")
        if st.drift_sizes and len(lat.dims) != 1:
            raise ConfigError("drift tables are supported for chains only")
        if not self.weight.gamma > 0:
            raise ConfigError("weight.gamma must be positive")
        if not self.requested_gamma > 0:
            raise ConfigError("stability.gamma must be positive")
        if self.ltqo.basis not in ("full", "random"):
            raise ConfigError("ltqo.basis must be 'full' or 'random'")
        if sv.flow_step <= 0 or sv.max_halvings < 0:
            raise ConfigError("solver.flow_step must be positive and max_halvings non-negative")
        for f in dataclasses.fields(self.tolerances):
            if not getattr(self.tolerances, f.name) > 0:
                raise ConfigError(f"tolerances.{f.name} must be positive")


def _build(typ, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(typ)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(extra)}")
    try:
        return typ(**data)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc

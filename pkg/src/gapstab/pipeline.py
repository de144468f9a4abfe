"""Stage runner: lattice -> model -> LTQO -> weights -> flow -> decompositions -> beta -> verdict.

Every stage writes a record with a status ("ok", "failed" or "skipped"); a failed
stage marks everything downstream of it as skipped instead of raising.
"""
from __future__ import annotations

import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, TermSpec
from .dynamics import HeisenbergPropagator, check_F_ground_commutation
from .lattice import LatticeGraph, ball, partition_family, verify_separation
from .ltqo import ProbeSpec, fit_G0, indistinguishability_check, ltqo_table
from .models import (AnchoredInteraction, FrustrationFreeModel, ModelError, assemble_hamiltonian,
                     bond_perturbation, field_perturbation, kernel_basis, local_matrix, merge,
                     model_zoo, nesting_residual)
from .operators import embed, read_operator
from .spectral import certify_local_gaps, diagonalize, gap_above_ground
from .stability import (PerturbedFamily, decompose_phi1, decompose_phi2,
                        dressed_hamiltonian_W, form_bound_beta, integrate_flow, stability_beta,
                        stability_sweep, transport_check, verify_form_bound)
from .weights import GapWeightPair

STAGES = ("lattice", "model", "ltqo", "weights", "flow", "decomposition", "beta", "verdict")


@dataclass
class StabilityReport:
    config: dict
    provenance: dict
    stages: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)
    verdict: dict | None = None
    drift: list = field(default_factory=list)

    def stage(self, name: str) -> dict:
        return self.stages.get(name, {"status": "skipped"})

    def ok(self, name: str) -> bool:
        return self.stage(name).get("status") == "ok"

    def residual(self, name: str, value, tolerance, empirical: bool = False, note: str = "") -> bool:
        passed = value is not None and value <= tolerance
        row = {"name": name, "value": value, "tolerance": tolerance, "passed": passed}
        if empirical:
            row["empirical"] = True
        if note:
            row["note"] = note
        self.residuals.append(row)
        return passed

    @property
    def passed(self) -> bool:
        return (all(r["passed"] for r in self.residuals)
                and all(s.get("status") == "ok" for s in self.stages.values())
                and bool(self.verdict and self.verdict.get("passed")))

    def to_dict(self) -> dict:
        return {"config": self.config, "provenance": self.provenance, "stages": self.stages,
                "residuals": self.residuals, "verdict": self.verdict, "drift": self.drift,
                "passed": self.passed}


def _matrix(term: TermSpec, d: int, nsites: int) -> np.ndarray:
    if term.matrix is not None:
        M = np.asarray(term.matrix, dtype=float)
        if term.matrix_imag is not None:
            M = M + 1j * np.asarray(term.matrix_imag, dtype=float)
        if M.shape != (d ** nsites, d ** nsites):
            raise ModelError(f"{term.kind} matrix must be {d ** nsites} x {d ** nsites}")
        return M
    if term.ops is not None:
        if len(term.ops) != nsites:
            raise ModelError(f"{term.kind} term needs {nsites} operator names")
        M = np.ones((1, 1))
        for name in term.ops:  # first name on the least significant site
            M = np.kron(local_matrix(name, d), M)
        return M
    M = local_matrix(term.op, d)
    return M if nsites == 1 else np.kron(M, M)


def build_perturbation(cfg: ExperimentConfig, model: FrustrationFreeModel) -> AnchoredInteraction:
    amb = model.ambient
    d = cfg.local_dim()
    parts = []
    for t in cfg.perturbation.terms:
        if t.kind == "field":
            parts.append(field_perturbation(amb, _matrix(t, d, 1), t.sites, t.coefficient))
        elif t.kind == "bond":
            parts.append(bond_perturbation(amb, _matrix(t, d, 2), t.sites, t.coefficient))
        else:
            op = read_operator(Path(cfg.base_dir) / t.file, amb) * t.coefficient
            x = min(op.support) if t.anchor is None else int(t.anchor)
            n = t.radius
            if n is None:
                n = next(r for r in range(model.graph.n_sites + 1) if set(op.support) <= ball(model.graph, x, r))
            if not set(op.support) <= ball(model.graph, x, n):
                raise ModelError(f"operator from {t.file} is not supported in b_{x}({n})")
            parts.append(AnchoredInteraction({(x, n): op}, 0))
    phi = merge(*parts) if parts else AnchoredInteraction({}, 0)
    p = cfg.perturbation
    if p.strength is not None:
        phi.strength = p.strength
    if p.rate is not None:
        phi.rate = p.rate
    if p.exponent is not None:
        phi.exponent = p.exponent
    return phi


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_sha256": cfg.digest(), "seed": cfg.seed, "gapstab": __version__,
            "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _calibration(cfg: ExperimentConfig) -> float:
    grid = [float(s) for s in cfg.stability.s_grid]
    if cfg.stability.calibration_s is not None:
        return float(cfg.stability.calibration_s)
    nonzero = [s for s in grid if s != 0]
    return min(nonzero) if nonzero else 0.0


def _fail(report: StabilityReport, stage: str, exc: Exception) -> None:
    report.stages[stage] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _skip_rest(report: StabilityReport, after: str, reason: str) -> None:
    for s in STAGES[STAGES.index(after) + 1:]:
        report.stages.setdefault(s, {"status": "skipped", "reason": reason})


def run_pipeline(cfg: ExperimentConfig, assumptions_only: bool = False, drift: bool = True) -> StabilityReport:
    tol = cfg.tolerances
    sv = cfg.solver
    report = StabilityReport(cfg.to_dict(), _provenance(cfg))
    ctx: dict = {}

    # lattice and partitions
    try:
        graph = LatticeGraph.box(cfg.lattice.dims, cfg.lattice.periodic_axes())
        n_max = 2 * max(graph.eccentricity(x) for x in range(graph.n_sites))
        fam = partition_family(graph, n_max, cfg.partitions.zeta, cfg.partitions.c)
        sep = verify_separation(fam)
        ctx.update(graph=graph, partitions=fam)
        report.stages["lattice"] = {"status": "ok" if sep.passed else "failed", "graph": graph.describe(),
                                    "c": fam.c, "zeta": fam.zeta, "n_max": n_max,
                                    "classes": {str(n): fam.n_classes(n) for n in fam.scales},
                                    "separation": sep.to_dict()}
    except Exception as exc:  # noqa: BLE001 - recorded in the report
        _fail(report, "lattice", exc)
    if not report.ok("lattice"):
        _skip_rest(report, "lattice", "lattice stage did not pass")
        return report

    # model certification: frustration-freeness, nesting, kernels, local gaps
    try:
        model = model_zoo(cfg.model.name, graph=graph, certify=False, max_dim=sv.max_iterative_dim,
                          max_dense_dim=sv.max_dense_dim, **cfg.model.params)
        ctx["model"] = model
        rec = _certify_model(cfg, model)
        gaps = certify_local_gaps(model, fam, max_dense_dim=sv.max_dense_dim,
                                  max_iterative_dim=sv.max_iterative_dim)
        ctx["gaps"] = gaps
        amb = model.ambient.sites
        Hamb = assemble_hamiltonian(model, amb)
        spec = diagonalize(Hamb, max_dense_dim=sv.max_dense_dim, k=8, max_iterative_dim=sv.max_iterative_dim)
        frag = gap_above_ground(spec)
        ctx["gamma0"] = frag.gap
        rec["ambient"] = {"E": frag.E, "kernel_dim": frag.multiplicity, "gap": frag.gap,
                          "ambiguous": frag.ambiguous, "tolerance": frag.tolerance}
        rec["local_gaps"] = gaps.to_dict()
        ok = rec["frustration_free"]["passed"] and rec["nesting"]["passed"] and gaps.passed \
            and frag.gap is not None and frag.gap > 0
        report.residual("frustration_free", rec["frustration_free"]["worst"], tol.frustration_free)
        report.residual("nesting", rec["nesting"]["worst"], tol.nesting)
        report.stages["model"] = {"status": "ok" if ok else "failed", **rec}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "model", exc)
    if not report.ok("model"):
        _skip_rest(report, "model", "model certification did not pass")
        return report

    # LTQO
    model, gaps = ctx["model"], ctx["gaps"]
    try:
        if not cfg.ltqo.enabled:
            report.stages["ltqo"] = {"status": "skipped", "reason": "disabled in config"}
        elif report.stages["model"]["ambient"]["kernel_dim"] != 1:
            report.stages["ltqo"] = {"status": "skipped",
                                     "reason": "ambient kernel is degenerate; no reference state declared"}
        else:
            probes = ProbeSpec(cfg.ltqo.basis, cfg.ltqo.samples, cfg.seed)
            est = ltqo_table(model, cfg.ltqo.sites, cfg.ltqo.m_max, probes=probes,
                             exclude_clipped=cfg.ltqo.exclude_clipped)
            rec = {"table": est.to_dict()}
            worst = max(est.lower.values(), default=0.0)
            rec["max_lower"] = worst
            by_r = est.by_distance("upper")
            ok = not est.monotone_violations
            if by_r and max(by_r) >= 3:
                fit = fit_G0(by_r, fam.zeta, gaps.alpha or 0.0, graph.nu)
                est.fit = fit
                ctx["G0"] = fit.decay
                rec["fit"] = fit.to_dict()
                ok &= fit.moment is None or fit.moment.verdict == "pass"
            else:
                rec["fit"] = None
                rec["fit_note"] = "fewer than four distances; no G0 fit"
            if cfg.ltqo.indistinguishability and "G0" in ctx:
                rec["indistinguishability"] = _indistinguishability(cfg, model, ctx["G0"])
                ok &= rec["indistinguishability"]["worst_slack"] <= 0
            rec["table"] = est.to_dict()
            report.stages["ltqo"] = {"status": "ok" if ok else "failed", **rec}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "ltqo", exc)
    if assumptions_only:
        return report

    # weight pair
    try:
        pair = GapWeightPair(cfg.weight.gamma, cfg.weight.profile, tuple(cfg.weight.table))
        ctx["pair"] = pair
        rec = {"pair": pair.describe(), "norms": pair.norms()}
        gamma0 = ctx["gamma0"]
        rec["gamma_below_ambient_gap"] = gamma0 is not None and pair.gamma <= gamma0
        ok = True
        if model.ambient.dim <= sv.max_dense_dim and report.stages["model"]["ambient"]["kernel_dim"] == 1:
            prop = HeisenbergPropagator.from_operator(assemble_hamiltonian(model, model.ambient.sites),
                                                      max_dense_dim=sv.max_dense_dim)
            probes = [embed(op, model.ambient.sites) for _, op in sorted(model.h.items())[:4]]
            comm = check_F_ground_commutation(prop, pair, probes)
            rec["f_ground_commutation"] = comm
            ok = report.residual("f_ground_commutation", comm, tol.f_ground_commutation)
        report.stages["weights"] = {"status": "ok" if ok else "failed", **rec}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "weights", exc)
    if not report.ok("weights"):
        _skip_rest(report, "weights", "weight stage did not pass")
        return report

    # perturbed family and spectral flow
    try:
        phi = build_perturbation(cfg, model)
        family = PerturbedFamily.build(model, phi, cfg.stability.lambda_region, cfg.stability.s_grid,
                                       sv.max_dense_dim)
        flow = integrate_flow(family, ctx["pair"], h=sv.flow_step, max_halvings=sv.max_halvings)
        tc = transport_check(flow, family)
        ctx.update(family=family, flow=flow, phi=phi)
        stats = flow.stats()
        ok = report.residual("transport", tc["worst"], tol.transport)
        ok &= report.residual("unitarity", stats["worst_unitarity"], tol.unitarity,
                              note="largest ||u*u - 1|| before each polar correction")
        report.stages["flow"] = {"status": "ok" if ok else "failed", "perturbation": phi.validate(graph).to_dict(),
                                 "lambda": sorted(family.region), "table": family.table(),
                                 "jumps": family.jumps(), "transport": tc, "integrator": stats}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "flow", exc)
    if not report.ok("flow"):
        _skip_rest(report, "flow", "spectral flow did not pass")
        return report

    # decompositions at the calibration point
    family, flow = ctx["family"], ctx["flow"]
    s_star = _calibration(cfg)
    try:
        W = dressed_hamiltonian_W(family, flow, s_star, tol=tol.ground_expectation)
        ctx["W"] = W
        report.residual("spectrum_preservation", W.spectrum_residual, tol.spectrum_preservation)
        if W.ground_expectation is not None:
            report.residual("ground_expectation", W.ground_expectation, tol.ground_expectation)
        dressed = decompose_phi1(family, flow, s_star, tol=tol.phi1_reconstruction)
        report.residual("phi1_reconstruction", dressed.reconstruction1, tol.phi1_reconstruction)
        if dressed.commutation:
            report.residual("phi1_ground_commutation", max(dressed.commutation.values()),
                            tol.ground_expectation)
        dressed = decompose_phi2(model, dressed, family, W, ctx.get("G0"), tol=tol.phi2_reconstruction,
                                 annihilation_tol=tol.annihilation, ortho_tol=tol.layer_orthogonality)
        ctx["dressed"] = dressed
        rec = {"s_star": s_star, "W_norm": W.norm, "E": W.E, **dressed.summary()}
        if dressed.phi2 or s_star == 0:
            if dressed.reconstruction2 is not None:
                report.residual("phi2_reconstruction", dressed.reconstruction2, tol.phi2_reconstruction)
                report.residual("annihilation", dressed.annihilation, tol.annihilation)
                report.residual("layer_orthogonality", dressed.orthogonality, tol.layer_orthogonality)
            status = "ok"
        else:
            status = "failed"
            rec["reason"] = dressed.note or "no Phi2 terms"
        report.stages["decomposition"] = {"status": status, **rec}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "decomposition", exc)
    if not report.ok("decomposition"):
        _skip_rest(report, "decomposition", "decomposition did not pass")
        return report

    # beta and the form bound
    dressed, W = ctx["dressed"], ctx["W"]
    try:
        G2 = dressed.G2_by_scale()
        gamma_table = gaps.gamma_table
        bst = stability_beta(G2, fam.c, fam.zeta, gamma_table, model.R)
        # Phi2 norms at s* directly: the operator inequality at s*
        raw = {n: v * 2 * abs(s_star) for n, v in G2.items()}
        bT = form_bound_beta(raw, fam.c, fam.zeta, gamma_table, model.R)
        fb = verify_form_bound(family.H0, W.W, bT.beta, tol.form_bound)
        ctx["beta"] = bst.beta
        rec = {"beta": bst.to_dict(), "beta_at_s_star": bT.to_dict(), "form_bound": fb.to_dict(),
               "inputs": {"c": fam.c, "zeta": fam.zeta, "gamma1": gaps.gamma1, "alpha": gaps.alpha,
                          "gamma_table": {str(n): v for n, v in sorted(gamma_table.items())}},
               "envelope": {str(n): v for n, v in G2.items()}, "empirical": True}
        report.residual("form_bound", max(0.0, -min(fb.min_minus, fb.min_plus)), fb.tolerance)
        report.stages["beta"] = {"status": "ok" if fb.passed else "failed", **rec}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "beta", exc)
    if not report.ok("beta"):
        _skip_rest(report, "beta", "form bound did not pass")
        return report

    try:
        inputs = report.stages["beta"]["inputs"]
        v = stability_sweep(family, ctx["beta"], cfg.requested_gamma,
                            {k: inputs[k] for k in ("c", "zeta", "gamma1", "alpha")},
                            points=cfg.stability.sweep_points, tol=tol.sweep)
        report.verdict = v.to_dict()
        report.stages["verdict"] = {"status": "ok" if v.passed else "failed"}
    except Exception as exc:  # noqa: BLE001
        _fail(report, "verdict", exc)

    if drift and cfg.stability.drift_sizes:
        report.drift = [_drift_row(cfg, L) for L in cfg.stability.drift_sizes]
    return report


def _certify_model(cfg: ExperimentConfig, model: FrustrationFreeModel) -> dict:
    """Zero ground energy on every ball and the whole volume; nesting along growing balls."""
    tol = cfg.tolerances
    g = model.graph
    amb = model.ambient.sites
    worst_ff, worst_nest = 0.0, 0.0
    rows = []
    seen = set()
    for x in range(g.n_sites):
        chain = []
        for n in range(model.R, g.eccentricity(x) + 1):
            reg = tuple(sorted(ball(g, x, n)))
            chain.append(reg)
            if reg in seen:
                continue
            seen.add(reg)
            V, spec = kernel_basis(model, reg, cfg.solver.max_dense_dim, cfg.solver.max_iterative_dim)
            lo = abs(float(spec.eigenvalues[0]))
            worst_ff = max(worst_ff, lo)
            rows.append({"region": list(reg), "min_spec": float(spec.eigenvalues[0]), "kernel_dim": V.shape[1]})
        for inner, outer in zip(chain, chain[1:]):
            if inner != outer:
                worst_nest = max(worst_nest, nesting_residual(model, outer, inner))
    psd = min(float(np.linalg.eigvalsh(op.dense())[0]) for op in model.h.values())
    return {"frustration_free": {"worst": worst_ff, "min_term_eigenvalue": psd,
                                 "passed": worst_ff <= tol.frustration_free and psd >= -tol.frustration_free,
                                 "regions": rows},
            "nesting": {"worst": worst_nest, "passed": worst_nest <= tol.nesting}}


def _indistinguishability(cfg: ExperimentConfig, model: FrustrationFreeModel, G0) -> dict:
    g = model.graph
    sites = cfg.ltqo.sites if cfg.ltqo.sites is not None else [g.n_sites // 2]
    rows = []
    worst = -math.inf
    probes = ProbeSpec("random", 8, cfg.seed)
    for x in sites:
        ecc = g.eccentricity(x)
        for m in range(0, ecc):
            n = min(m + 2, ecc)
            slack = indistinguishability_check(model, x, 0, m, n, G0, probes=probes)
            rows.append({"x": x, "m": m, "n": n, "slack": slack})
            worst = max(worst, slack)
    return {"rows": rows, "worst_slack": worst, "empirical": True}


def _drift_row(cfg: ExperimentConfig, L: int) -> dict:
    """Key residuals and the beta inputs at another chain length."""
    try:
        sub = cfg.replace(**{"lattice.dims": [L], "stability.drift_sizes": [],
                             "stability.lambda_region": None, "ltqo.enabled": False})
        rep = run_pipeline(sub, drift=False)
    except Exception as exc:  # noqa: BLE001
        return {"size": L, "error": f"{type(exc).__name__}: {exc}"}
    res = {r["name"]: r["value"] for r in rep.residuals}
    amb = rep.stage("model").get("ambient", {})
    beta = rep.stage("beta").get("beta", {}).get("beta")
    return {"size": L, "gamma0": amb.get("gap"), "kernel_dim": amb.get("kernel_dim"), "beta": beta,
            "transport": res.get("transport"), "phi1_reconstruction": res.get("phi1_reconstruction"),
            "phi2_reconstruction": res.get("phi2_reconstruction"),
            "stages": {k: v.get("status") for k, v in rep.stages.items()}, "empirical": True}

import math

import numpy as np
import pytest
from scipy.linalg import expm

from gapstab.decay import DecayFunction
from gapstab.lattice import partition_family
from gapstab.models import PAULI, field_perturbation, model_zoo, spin1_operators
from gapstab.spectral import certify_local_gaps
from gapstab.stability import (InvalidGapError, PerturbedFamily, StabilityError, decompose_phi1,
                               decompose_phi2, dressed_hamiltonian_W, form_bound_beta, integrate_flow,
                               stability_beta, stability_sweep, threshold, transport_check,
                               verify_form_bound)
from gapstab.weights import GapWeightPair

PAIR = GapWeightPair(0.5)


def paramagnet_family(N, op, grid, region=None, coefficient=1.0):
    m = model_zoo("paramagnet", N=N)
    phi = field_perturbation(m.ambient, PAULI[op], region, coefficient)
    return m, PerturbedFamily.build(m, phi, region, grid)


# ---- beta arithmetic ----

def test_beta_from_finite_table():
    res = form_bound_beta({0: 3.0, 1: 1.0, 2: 0.5}, c=2.0, zeta=1.0, gamma=(0.5, 0.0))
    assert res.beta == pytest.approx(2 * (3.0 + 1.0 + 2 * 0.5) / 0.5)
    assert res.flag == "exact"
    assert form_bound_beta({0: 3.0, 1: 1.0}, 1.0, 1.0, (1.0, 0.0), R=1).beta == pytest.approx(1.0)


def test_beta_geometric_series_closed_form():
    G = {n: math.exp(-n) for n in range(1, 200)}
    res = form_bound_beta(G, c=1.0, zeta=1.0, gamma=(1.0, 0.0))
    e = math.e
    assert res.beta == pytest.approx(e / (e - 1) ** 2, rel=1e-12)


def test_beta_with_analytic_tail():
    G = DecayFunction.stretched_exp(zeta=0.0, a=1.0, theta=1.0, scale=1.0)
    res = form_bound_beta(G, 1.0, 1.0, (1.0, 0.0), R=1, horizon=30)
    e = math.e
    assert res.flag == "rigorous"
    assert res.beta >= e / (e - 1) ** 2
    assert res.beta == pytest.approx(e / (e - 1) ** 2, rel=1e-10)
    table = DecayFunction.table([1.0, 0.5], tail="unknown")
    assert form_bound_beta(table, 1.0, 1.0, (1.0, 0.0), horizon=10).flag == "empirical"


def test_gap_growth_enters_beta():
    res = form_bound_beta({1: 1.0, 4: 1.0}, 1.0, 0.0, (1.0, 1.0))
    assert res.beta == pytest.approx(1.0 + 4.0)
    assert stability_beta({1: 1.0, 4: 1.0}, 1.0, 0.0, (1.0, 1.0)).beta == pytest.approx(10.0)


def test_invalid_gaps_rejected():
    with pytest.raises(InvalidGapError):
        form_bound_beta({1: 1.0}, 1.0, 1.0, (0.0, 0.0))
    with pytest.raises(InvalidGapError):
        form_bound_beta({1: 1.0}, 1.0, 1.0, {1: 0.0})
    with pytest.raises(TypeError):
        form_bound_beta([1.0], 1.0, 1.0, (1.0, 0.0))


def test_threshold():
    assert threshold(1.0, 0.5, 6.0) == pytest.approx(1 / 12)
    assert threshold(1.0, 0.5, 0.0) == math.inf
    assert threshold(0.4, 0.5, 1.0) == 0.0


def test_form_bound_boundary():
    H0 = np.diag([0.0, 1.0, 2.0])
    W = np.diag([0.0, 0.5, -1.0])
    assert verify_form_bound(H0, W, 0.5).passed
    assert not verify_form_bound(H0, W, 0.49).passed
    leaky = W.copy()
    leaky[0, 1] = leaky[1, 0] = 0.1  # W does not annihilate the ground state
    assert not verify_form_bound(H0, leaky, 100.0).passed
    assert verify_form_bound(H0, H0, 1.0).passed


# ---- perturbed family and flow ----

def test_family_validation():
    m = model_zoo("paramagnet", N=3)
    phi = field_perturbation(m.ambient, PAULI["sz"])
    with pytest.raises(StabilityError):
        PerturbedFamily.build(m, phi, grid=(0.1, 0.2))
    with pytest.raises(StabilityError):
        PerturbedFamily.build(m, phi, region=[0, 5])
    with pytest.raises(StabilityError):
        PerturbedFamily.build(m, phi, max_dense_dim=4)


def test_longitudinal_field_gap_is_exact():
    grid = tuple(np.linspace(0, 0.4, 9))
    _, fam = paramagnet_family(8, "sz", grid)
    for s in grid:
        assert fam.gap(s) == pytest.approx(1 - 2 * s, abs=1e-10)
        assert fam.E(s) == pytest.approx(8 * s, abs=1e-10)
    assert fam.jumps() == []
    assert np.abs(fam.generator(0.2, PAIR)).max() < 1e-12  # V commutes with H0


def test_flow_transports_ground_state():
    grid = (0.0, 0.05, 0.1, 0.15)
    _, fam = paramagnet_family(4, "sx", grid, region=[1, 2])
    flow = integrate_flow(fam, PAIR, h=0.01)
    tc = transport_check(flow, fam)
    assert tc["worst"] < 1e-6
    assert max(flow.unitarity.values()) < 1e-9
    for s in grid:
        u = flow.u(s)
        assert np.allclose(u.conj().T @ u, np.eye(16), atol=1e-12)


def test_flow_matches_fine_exponential_product():
    _, fam = paramagnet_family(3, "sx", (0.0, 0.1), region=[0])
    flow = integrate_flow(fam, PAIR, h=0.01)
    n = 400
    u = np.eye(8, dtype=complex)
    for i in range(n):
        mid = (i + 0.5) * 0.1 / n
        u = expm(-1j * (0.1 / n) * fam.generator(mid, PAIR)) @ u
    assert np.abs(flow.u(0.1) - u).max() < 1e-6


def test_dressed_W_properties():
    _, fam = paramagnet_family(4, "sx", (0.0, 0.1), region=[1, 2])
    flow = integrate_flow(fam, PAIR)
    W = dressed_hamiltonian_W(fam, flow, 0.1)
    assert W.spectrum_residual < 1e-9
    assert W.ground_expectation < 1e-8
    w0 = fam.spectrum(0.0).ground_state
    assert np.linalg.norm(W.W @ w0) < 1e-6


@pytest.fixture(scope="module")
def paramagnet_decomposition():
    m, fam = paramagnet_family(8, "sz", (0.0, 0.05))
    flow = integrate_flow(fam, PAIR)
    W = dressed_hamiltonian_W(fam, flow, 0.05)
    d1 = decompose_phi1(fam, flow, 0.05)
    d2 = decompose_phi2(m, d1, fam, W)
    return m, fam, d2


def test_decompositions_reconstruct(paramagnet_decomposition):
    _, _, d = paramagnet_decomposition
    assert d.reconstruction1 < 1e-7
    assert d.reconstruction2 < 1e-6
    assert d.annihilation < 1e-8
    assert d.orthogonality < 1e-8
    assert max(d.commutation.values()) < 1e-8


def test_paramagnet_beta_and_sweep(paramagnet_decomposition):
    m, fam, d = paramagnet_decomposition
    parts = partition_family(m.graph, 2 * m.graph.diameter)
    gaps = certify_local_gaps(m, parts)
    beta = stability_beta(d.G2_by_scale(), parts.c, parts.zeta, gaps.gamma_table, m.R).beta
    assert beta == pytest.approx(6.0, rel=1e-8)
    v = stability_sweep(fam, beta, 0.5)
    assert v.s0 == pytest.approx(1 / 12)
    assert v.passed
    inside = [r for r in v.rows if r["status"] == "pass"]
    assert len(inside) >= 9
    assert all(r["status"] == "outside hypothesis" for r in v.rows if r["s"] > v.s0)
    for r in inside:
        assert r["gap"] == pytest.approx(1 - 2 * r["s"], abs=1e-10)


def test_zero_beta_gives_unbounded_threshold():
    _, fam = paramagnet_family(3, "n_down", (0.0, 0.1, 0.2))  # V = H0 has no off-ground action
    v = stability_sweep(fam, 0.0, 0.5)
    assert v.s0 == math.inf
    assert v.to_dict()["s0"] == "inf"
    assert [r["s"] for r in v.rows] == [0.0, 0.1, 0.2]
    assert v.passed and all(r["status"] == "pass" for r in v.rows)


def test_degenerate_ambient_kernel_skips_phi2():
    m = model_zoo("aklt_open", N=3)
    S = spin1_operators()
    phi = field_perturbation(m.ambient, S["Sz"] @ S["Sz"], [1])
    fam = PerturbedFamily.build(m, phi, [1], (0.0, 0.01))
    flow = integrate_flow(fam, GapWeightPair(0.1))
    d = decompose_phi1(fam, flow, 0.01)
    d = decompose_phi2(m, d, fam)
    assert not d.phi2
    assert "dimension 4" in d.note

from math import comb

import numpy as np
import pytest

from gapstab.lattice import LatticeGraph, ball
from gapstab.models import (PAULI, FrustrationError, ModelError, aklt_projector, assemble_hamiltonian,
                            assemble_perturbation, bond_perturbation, certify_frustration_free,
                            field_perturbation, kernel_basis, merge, model_zoo, nesting_residual,
                            spin1_operators)
from gapstab.operators import embed


def test_aklt_projector_is_spin2_projector():
    P = aklt_projector()
    assert np.allclose(P @ P, P)
    assert np.trace(P) == pytest.approx(5.0)
    S = spin1_operators()
    tot = [np.kron(S[a], np.eye(3)) + np.kron(np.eye(3), S[a]) for a in ("Sx", "Sy", "Sz")]
    S2 = sum(t @ t for t in tot)
    assert np.allclose(S2 @ P, 6 * P)


def test_paramagnet_spectrum_is_binomial():
    N = 6
    m = model_zoo("paramagnet", N=N)
    w = np.linalg.eigvalsh(assemble_hamiltonian(m, range(N)).dense())
    expected = np.repeat(np.arange(N + 1.0), [comb(N, k) for k in range(N + 1)])
    assert np.allclose(w, expected)


@pytest.mark.parametrize("name,N,dim", [
    ("paramagnet", 5, 1), ("aklt_open", 5, 4), ("aklt_periodic", 6, 1), ("ising_projector", 6, 2),
])
def test_kernel_dimensions(name, N, dim):
    m = model_zoo(name, N=N)
    assert m.certification.passed
    V, _ = kernel_basis(m, range(N))
    assert V.shape[1] == dim
    H = assemble_hamiltonian(m, range(N)).dense()
    assert np.abs(H @ V).max() < 1e-10


def test_aklt_open_edge_states_on_every_segment(aklt_open5):
    for a in range(4):
        for b in range(a + 1, 5):
            V, _ = kernel_basis(aklt_open5, range(a, b + 1))
            assert V.shape[1] == 4


@pytest.mark.parametrize("name,N", [("aklt_open", 6), ("aklt_periodic", 6), ("ising_projector", 7)])
def test_ground_spaces_nest(name, N):
    m = model_zoo(name, N=N)
    g = m.graph
    for x in range(N):
        for n in range(1, 3):
            inner = ball(g, x, n)
            outer = ball(g, x, n + 1)
            if inner == outer:
                continue
            assert nesting_residual(m, outer, inner) < 1e-10


def test_nesting_needs_containment(aklt_open5):
    with pytest.raises(ModelError):
        nesting_residual(aklt_open5, [0, 1], [2, 3])


def test_frustrated_custom_model_is_flagged():
    g = LatticeGraph.chain(3)
    terms = [{"matrix": PAULI["n_down"].real, "sites": [0], "anchor": 0},
             {"matrix": PAULI["n_up"].real, "sites": [0], "anchor": 1}]
    m = model_zoo("custom", graph=g, d=2, R=1, terms=terms)
    assert not m.certification.passed
    with pytest.raises(FrustrationError):
        kernel_basis(m, range(3))


def test_certification_reports_each_volume(aklt_open5):
    rec = certify_frustration_free(aklt_open5, [[0, 1], [1, 2, 3], range(5)])
    assert rec.passed
    assert [r["region"] for r in rec.checks["volumes"]] == [[0, 1], [1, 2, 3], [0, 1, 2, 3, 4]]


def test_bad_models_rejected():
    with pytest.raises(ModelError):
        model_zoo("nope", N=3)
    with pytest.raises(ModelError):
        model_zoo("ising_projector", N=4, hopping=1.0)
    with pytest.raises(ModelError):
        model_zoo("aklt_periodic", graph=LatticeGraph.chain(4))


def test_perturbation_regrouping_preserves_sum(aklt_open5):
    amb = aklt_open5.ambient
    S = spin1_operators()
    phi = merge(field_perturbation(amb, S["Sz"] @ S["Sz"]),
                bond_perturbation(amb, np.kron(S["Sx"], S["Sx"]), coefficient=0.3))
    assert phi.validate(amb.graph).passed
    reg = phi.regrouped(1)
    assert min(n for _, n in reg.keys()) == 1
    full = range(5)
    a = assemble_perturbation(phi, full, amb).dense()
    b = assemble_perturbation(reg, full, amb).dense()
    assert np.allclose(a, b)
    for (x, n), op in reg.terms.items():
        assert set(op.support) <= ball(amb.graph, x, n)


def test_field_perturbation_matches_sum():
    m = model_zoo("paramagnet", N=4)
    phi = field_perturbation(m.ambient, PAULI["sx"], sites=[1, 2], coefficient=0.5)
    V = assemble_perturbation(phi, range(4), m.ambient).dense()
    ref = sum(embed(op, range(4)).dense() for op in phi.terms.values())
    assert np.allclose(V, ref)
    assert phi.sup_norm() == pytest.approx(0.5)

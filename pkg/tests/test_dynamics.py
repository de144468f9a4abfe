import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from gapstab.dynamics import (HeisenbergPropagator, WeightGapWarning, check_F_ground_commutation,
                              evolve, interaction_picture_residual, lr_commutator_profile, weighted_op)
from gapstab.lattice import LatticeGraph
from gapstab.models import PAULI, assemble_hamiltonian, model_zoo
from gapstab.operators import AmbientVolume, LocalOperator, embed, operator_norm, site_operator
from gapstab.weights import GapWeightPair
from oracles import time_domain_F_G

AMB3 = AmbientVolume.uniform(LatticeGraph.chain(3), 2)


def rand_herm(D, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((D, D)) + 1j * r.standard_normal((D, D))
    return (X + X.conj().T) / 2


def rand_mat(D, seed):
    r = np.random.default_rng(seed)
    return r.standard_normal((D, D)) + 1j * r.standard_normal((D, D))


@pytest.fixture(scope="module")
def random_prop():
    H = LocalOperator(rand_herm(8, 0), (0, 1, 2), AMB3, hermitian=True)
    return HeisenbergPropagator.from_operator(H), H.dense()


@given(st.floats(-5, 5), st.integers(0, 100))
def test_evolve_matches_expm(random_prop, t, seed):
    prop, H = random_prop
    A = rand_mat(8, seed)
    U = expm(1j * t * H)
    assert np.allclose(evolve(prop, A, t), U @ A @ U.conj().T, atol=1e-10)


def test_evolution_is_a_group(random_prop):
    prop, _ = random_prop
    A = rand_mat(8, 1)
    assert np.allclose(evolve(prop, evolve(prop, A, 0.7), -1.9), evolve(prop, A, -1.2), atol=1e-12)
    assert np.allclose(prop.unitary(0.3) @ prop.unitary(-0.3), np.eye(8), atol=1e-13)


def test_F_and_G_match_time_domain_quadrature(random_prop):
    prop, H = random_prop
    pair = GapWeightPair(0.5)
    probes = [rand_mat(8, 100 + i) for i in range(20)]
    F_ref, G_ref = time_domain_F_G(H, probes, 0.5)
    for A, Fr, Gr in zip(probes, F_ref, G_ref):
        assert np.abs(weighted_op(prop, A, "F", pair) - Fr).max() < 1e-6
        assert np.abs(weighted_op(prop, A, "G", pair) - Gr).max() < 1e-6


def test_F_is_a_contraction(random_prop):
    prop, _ = random_prop
    pair = GapWeightPair(0.8)
    for seed in range(10):
        A = rand_mat(8, seed)
        assert operator_norm(weighted_op(prop, A, "F", pair)) <= operator_norm(A) * (1 + 1e-12)


def test_F_invariant_under_time_evolution(random_prop):
    prop, _ = random_prop
    pair = GapWeightPair(0.5)
    A = rand_mat(8, 3)
    FA = weighted_op(prop, A, "F", pair)
    assert np.allclose(weighted_op(prop, evolve(prop, A, 2.5), "F", pair), evolve(prop, FA, 2.5), atol=1e-12)


def test_G_solves_commutator_equation(random_prop):
    prop, H = random_prop
    pair = GapWeightPair(0.5)
    A = rand_mat(8, 4)
    lhs = 1j * (H @ weighted_op(prop, A, "G", pair) - weighted_op(prop, A, "G", pair) @ H)
    rhs = A - weighted_op(prop, A, "F", pair)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_weighted_op_rejects_unknown():
    H = LocalOperator(np.diag([0.0, 1.0]), (0,), AMB3)
    prop = HeisenbergPropagator.from_operator(H)
    with pytest.raises(ValueError):
        weighted_op(prop, np.eye(2), "X", GapWeightPair(0.5))


def test_F_commutes_with_ground_projector():
    m = model_zoo("aklt_periodic", N=6)
    H = assemble_hamiltonian(m, range(6))
    prop = HeisenbergPropagator.from_operator(H)
    pair = GapWeightPair(0.2)
    probes = [site_operator(m.ambient, rand_herm(3, s), [s % 6]) for s in range(6)]
    assert check_F_ground_commutation(prop, pair, probes) < 1e-8


def test_weight_gap_mismatch_warns():
    m = model_zoo("paramagnet", N=3)
    prop = HeisenbergPropagator.from_operator(assemble_hamiltonian(m, range(3)))
    with pytest.warns(WeightGapWarning):
        check_F_ground_commutation(prop, GapWeightPair(1.5), [np.eye(8)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_F_ground_commutation(prop, GapWeightPair(0.9), [site_operator(m.ambient, PAULI["sx"], [1])]) < 1e-12


def test_degenerate_ground_state_rejected(aklt_open5):
    prop = HeisenbergPropagator.from_operator(assemble_hamiltonian(aklt_open5, range(5)))
    with pytest.raises(ValueError):
        check_F_ground_commutation(prop, GapWeightPair(0.2), [])


def test_interaction_picture_derivative():
    m = model_zoo("paramagnet", N=3)
    H0 = assemble_hamiltonian(m, range(3))
    V = sum(embed(site_operator(m.ambient, PAULI["sx"], [x]), range(3)).dense() for x in range(3))
    Hs = LocalOperator(H0.dense() + 0.3 * V, (0, 1, 2), m.ambient, hermitian=True)
    p0, ps = HeisenbergPropagator.from_operator(H0), HeisenbergPropagator.from_operator(Hs)
    for t in (0.0, 0.4, 1.7):
        assert interaction_picture_residual(p0, ps, 0.3 * V, t) < 1e-6


def test_lr_commuting_model_has_zero_commutators():
    m = model_zoo("paramagnet", N=5)
    A = site_operator(m.ambient, PAULI["sx"], [0])
    B = site_operator(m.ambient, PAULI["sx"], [3])
    prof = lr_commutator_profile(m, A, B, np.linspace(0, 3, 7))
    assert np.abs(prof.profile).max() < 1e-12
    assert prof.mu is None


def test_lr_disjoint_supports_required():
    m = model_zoo("paramagnet", N=3)
    A = site_operator(m.ambient, PAULI["sx"], [0])
    with pytest.raises(ValueError):
        lr_commutator_profile(m, A, A, [0.0, 1.0])


def test_lr_commutator_grows_from_zero():
    m = model_zoo("ising_projector", N=8, hopping=0.5)
    A = site_operator(m.ambient, PAULI["sz"], [0])
    B = site_operator(m.ambient, PAULI["sz"], [5])
    prof = lr_commutator_profile(m, A, B, np.linspace(0, 4, 9))
    assert prof.profile[0] < 1e-12
    near = prof.grid[1]
    far = prof.grid[max(prof.grid)]
    assert near[-1] > far[-1]
    assert np.all(prof.profile <= 2 * 1 * 1 + 1e-9)


def test_F_kills_matrix_elements_across_the_gap(random_prop):
    prop, _ = random_prop
    pair = GapWeightPair(0.9)
    A = rand_mat(8, 5)
    M = prop.to_eigenbasis(weighted_op(prop, A, "F", pair))
    far = np.abs(prop.E[:, None] - prop.E[None, :]) >= pair.gamma
    assert far.any()
    assert np.abs(M[far]).max() < 1e-13

import numpy as np
import pytest

from gapstab.decay import DecayFunction
from gapstab.lattice import LatticeGraph, ball
from gapstab.ltqo import (AmbiguousReferenceError, ProbeSpec, ball_is_clipped, fit_G0,
                          indistinguishability_check, ltqo_deviation, ltqo_table, reference_state)
from gapstab.models import assemble_hamiltonian


def reduced_density(v, sites, keep, d):
    """rho on the kept sites (little-endian), by reshaping the state tensor."""
    n = len(sites)
    T = np.asarray(v).reshape([d] * n)
    pos = {s: n - 1 - i for i, s in enumerate(sites)}  # tensor axis of each site
    kept = [pos[s] for s in sorted(keep, reverse=True)]
    rest = [a for a in range(n) if a not in kept]
    M = np.transpose(T, kept + rest).reshape(d ** len(kept), -1)
    return M @ M.conj().T


def kernel_oracle(model, region):
    H = assemble_hamiltonian(model, region).dense()
    w, V = np.linalg.eigh(H)
    return V[:, w < 1e-9]


@pytest.fixture(scope="module")
def ring_table(aklt_ring6):
    return ltqo_table(aklt_ring6, sites=[0], exclude_clipped=False)


def test_product_ground_state_is_exactly_indistinguishable(paramagnet6):
    est = ltqo_table(paramagnet6, sites=[0, 2])
    assert max(est.upper.values()) < 1e-12
    assert max(est.lower.values()) < 1e-12


def test_degenerate_ambient_kernel_needs_reference(aklt_open5):
    with pytest.raises(AmbiguousReferenceError):
        reference_state(aklt_open5)
    V = kernel_oracle(aklt_open5, range(5))
    v = reference_state(aklt_open5, V[:, 0] * 3)
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_probe_bound_dominates_reduced_density_distance(aklt_ring6, ring_table):
    g = aklt_ring6.graph
    omega = kernel_oracle(aklt_ring6, range(6))[:, 0]
    for (x, k, m), low in ring_table.lower.items():
        K = sorted(ball(g, x, k))
        M = sorted(ball(g, x, m))
        rho_ref = reduced_density(omega, list(range(6)), K, 3)
        V = kernel_oracle(aklt_ring6, M)
        best = 0.0
        for p in range(V.shape[1]):
            diff = reduced_density(V[:, p], M, K, 3) - rho_ref
            best = max(best, np.abs(np.linalg.eigvalsh(diff)).sum())
        norm = (1 + k) ** g.nu
        assert low * norm >= best - 1e-10
        assert ring_table.upper[(x, k, m)] >= low - 1e-12


def test_random_observables_stay_below_certified_bound(aklt_ring6, ring_table, rng):
    g = aklt_ring6.graph
    omega = kernel_oracle(aklt_ring6, range(6))[:, 0]
    x, k, m = 0, 1, 2
    K, M = sorted(ball(g, x, k)), sorted(ball(g, x, m))
    V = kernel_oracle(aklt_ring6, M)
    rho_ref = reduced_density(omega, list(range(6)), K, 3)
    dK = 3 ** len(K)
    rhos = [[None] * V.shape[1] for _ in range(V.shape[1])]
    for p in range(V.shape[1]):
        for q in range(V.shape[1]):
            # <V_p| (A x 1) |V_q> = Tr(A R_qp) with R_qp the off-diagonal reduction
            Tp = V[:, p].reshape([3] * len(M))
            Tq = V[:, q].reshape([3] * len(M))
            kept = [len(M) - 1 - M.index(s) for s in sorted(K, reverse=True)]
            rest = [a for a in range(len(M)) if a not in kept]
            Mp = np.transpose(Tp, kept + rest).reshape(dK, -1)
            Mq = np.transpose(Tq, kept + rest).reshape(dK, -1)
            rhos[p][q] = Mq @ Mp.conj().T
    for _ in range(50):
        X = rng.standard_normal((dK, dK)) + 1j * rng.standard_normal((dK, dK))
        A = X / np.linalg.norm(X, 2)
        comp = np.array([[np.trace(A @ rhos[p][q]) for q in range(V.shape[1])] for p in range(V.shape[1])])
        dev = np.linalg.norm(comp - np.trace(A @ rho_ref) * np.eye(V.shape[1]), 2)
        assert dev / (1 + k) <= ring_table.upper[(x, k, m)] + 1e-12


def test_deviation_decays_with_distance(ring_table):
    up = ring_table.by_distance("upper")
    low = ring_table.by_distance("lower")
    assert all(low[r] <= up[r] + 1e-12 for r in up)
    assert up[0] > up[1] > up[2]
    assert up[max(up)] < 1e-10  # m at the eccentricity: P_M is the ambient ground projector


def test_single_point_matches_table(aklt_ring6, ring_table):
    val = ltqo_deviation(aklt_ring6, 0, 1, 2, probes=ProbeSpec())
    assert val == pytest.approx(ring_table.lower[(0, 1, 2)], rel=1e-10, abs=1e-14)
    cert = ltqo_deviation(aklt_ring6, 0, 1, 2, certified=True)
    assert cert == pytest.approx(ring_table.upper[(0, 1, 2)], rel=1e-12)
    with pytest.raises(ValueError):
        ltqo_deviation(aklt_ring6, 0, 3, 2)


def test_random_probe_basis_is_seeded(aklt_ring6):
    a = ltqo_deviation(aklt_ring6, 0, 0, 1, probes=ProbeSpec("random", 8, seed=3))
    b = ltqo_deviation(aklt_ring6, 0, 0, 1, probes=ProbeSpec("random", 8, seed=3))
    assert a == b
    with pytest.raises(ValueError):
        ProbeSpec("other")


def test_clipping():
    ring = LatticeGraph.chain(6, periodic=True)
    chain = LatticeGraph.chain(6)
    assert not ball_is_clipped(ring, 0, 2)
    assert ball_is_clipped(ring, 0, 3)
    assert ball_is_clipped(chain, 0, 1)
    assert not ball_is_clipped(chain, 3, 2)


def test_envelope_fit():
    fit = fit_G0({0: 0.5, 1: 0.2, 2: 0.25, 3: 0.01})
    assert fit.flagged
    assert fit.envelope == {0: 0.5, 1: 0.25, 2: 0.25, 3: 0.01}
    assert fit.q > 0
    for r, v in fit.envelope.items():
        assert fit.decay(r) >= v * (1 - 1e-12)
    zero = fit_G0({r: 0.0 for r in range(5)})
    assert zero.decay(0) == 0.0
    with pytest.raises(ValueError):
        fit_G0({0: 1.0, 1: 0.1})


def test_indistinguishability_holds_with_measured_envelope(aklt_ring6, ring_table):
    up = ring_table.by_distance("upper")
    env = DecayFunction.table([up[r] for r in range(max(up) + 1)])
    for m, n in [(0, 1), (0, 2), (1, 2), (1, 3)]:
        assert indistinguishability_check(aklt_ring6, 0, 0, m, n, env) <= 1e-10

import math

import numpy as np
import pytest
import scipy.sparse as sp

from gapstab.lattice import LatticeGraph, partition_family
from gapstab.models import assemble_hamiltonian, model_zoo
from gapstab.operators import AmbientVolume, LocalOperator
from gapstab.spectral import (InsufficientDataError, SpectralData, SpectralError, certify_local_gaps,
                              diagonalize, gap_above_ground, kernel_dimension, smallest_nonzero)


def _op(M, n_sites=None):
    D = M.shape[0]
    n = int(round(math.log2(D)))
    amb = AmbientVolume.uniform(LatticeGraph.chain(n), 2)
    return LocalOperator(M, tuple(range(n)), amb)


def test_dense_matches_eigvalsh(rng):
    X = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
    H = (X + X.conj().T) / 2
    spec = diagonalize(_op(H), "dense")
    assert spec.complete
    assert np.allclose(spec.eigenvalues, np.linalg.eigvalsh(H))
    assert spec.max_residual < 1e-10


def test_iterative_matches_dense():
    m = model_zoo("aklt_periodic", N=6)
    H = assemble_hamiltonian(m, range(6), sparse=True)
    it = diagonalize(H, "iterative", k=8)
    dn = diagonalize(H, "dense")
    assert not it.complete
    assert np.allclose(it.eigenvalues, dn.eigenvalues[:8], atol=1e-10)
    again = diagonalize(H, "iterative", k=8)
    assert again is it


def test_non_hermitian_rejected():
    with pytest.raises(SpectralError):
        diagonalize(_op(np.array([[0.0, 1.0], [0.0, 0.0]])))


def test_caps_enforced():
    H = _op(sp.identity(16, format="csr"))
    with pytest.raises(SpectralError):
        diagonalize(H, "dense", max_dense_dim=8)
    with pytest.raises(SpectralError):
        diagonalize(H, "iterative", k=2, max_iterative_dim=8)


def _spec(vals, complete=True):
    vals = np.asarray(vals, dtype=float)
    return SpectralData(vals, np.eye(len(vals)), "x", complete, float(np.abs(vals).max()))


def test_gap_fragment():
    f = gap_above_ground(_spec([0.0, 1e-13, 0.5, 2.0]))
    assert (f.multiplicity, f.gap, f.ambiguous) == (2, 0.5, False)
    f = gap_above_ground(_spec([1.0, 1.0, 1.0]))
    assert f.gap is None
    with pytest.raises(InsufficientDataError):
        gap_above_ground(_spec([1.0, 1.0], complete=False))
    near = gap_above_ground(_spec([0.0, 5e-10, 1.0]))
    assert near.ambiguous


def test_kernel_dimension_and_smallest_nonzero():
    assert kernel_dimension(_spec([0.0, 0.0, 0.3, 1.0])) == 2
    assert kernel_dimension(_spec([0.1, 0.3])) == 0
    assert smallest_nonzero(_spec([0.0, 0.0, 0.3])) == 0.3
    assert smallest_nonzero(_spec([0.0, 0.0])) == math.inf


def test_paramagnet_local_gaps_are_one():
    m = model_zoo("paramagnet", N=6)
    fam = partition_family(m.graph, 3)
    rep = certify_local_gaps(m, fam)
    assert rep.passed
    assert all(g == pytest.approx(1.0) for g in rep.gamma_table.values())
    assert rep.alpha == pytest.approx(0.0, abs=1e-12)


def test_aklt_local_gaps_are_positive(aklt_open5):
    fam = partition_family(aklt_open5.graph, 3)
    rep = certify_local_gaps(aklt_open5, fam)
    assert rep.passed
    assert min(rep.gamma_table.values()) > 0.1
    assert all(s["zero_in_spectrum"] for s in rep.per_scale.values())


def test_local_gap_failure_is_reported():
    m = model_zoo("paramagnet", N=4)
    fam = partition_family(m.graph, 2)
    rep = certify_local_gaps(m, fam, gamma1=2.0, alpha=0.0)
    assert not rep.passed
    assert not rep.fitted

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gapstab.lattice import (LatticeError, LatticeGraph, ScaleTooLargeError, ball, growth_constant,
                             inflate, linf_ball, partition_family, separating_partition_zv,
                             verify_separation)


def brute_distance(g, x, y):
    total = 0
    for a, b, L, per in zip(g.coords[x], g.coords[y], g.dims, g.periodic):
        d = abs(a - b)
        total += min(d, L - d) if per else d
    return total


boxes = st.tuples(st.lists(st.integers(1, 5), min_size=1, max_size=2), st.booleans())


@given(boxes)
def test_distance_matches_coordinates(spec):
    dims, per = spec
    g = LatticeGraph.box(dims, per)
    for x, y in itertools.product(range(g.n_sites), repeat=2):
        assert g.distance(x, y) == brute_distance(g, x, y)


def test_chain_coordinates_little_endian():
    g = LatticeGraph.box([3, 2])
    assert g.coords[:4] == ((0, 0), (1, 0), (2, 0), (0, 1))
    assert g.site_at((2, 1)) == 5


def test_ring_distance_wraps():
    g = LatticeGraph.chain(6, periodic=True)
    assert g.distance(0, 5) == 1
    assert g.eccentricity(0) == 3


@given(boxes, st.integers(0, 4))
def test_ball_monotone_and_contains_centre(spec, n):
    g = LatticeGraph.box(*spec)
    for x in range(g.n_sites):
        b0, b1 = ball(g, x, n), ball(g, x, n + 1)
        assert x in b0 and b0 <= b1
        assert ball(g, x, n) <= linf_ball(g, x, n)


@given(boxes, st.integers(0, 3))
def test_inflate_is_union_of_balls(spec, n):
    g = LatticeGraph.box(*spec)
    region = {0, g.n_sites - 1}
    expect = frozenset().union(*(ball(g, x, n) for x in region))
    assert inflate(g, region, n) == expect


def test_bad_inputs():
    g = LatticeGraph.chain(4)
    with pytest.raises(LatticeError):
        ball(g, 7, 1)
    with pytest.raises(LatticeError):
        ball(g, 0, -1)
    with pytest.raises(LatticeError):
        inflate(g, [], 1)
    with pytest.raises(LatticeError):
        LatticeGraph.box([0])


def test_kappa_chain():
    # |b_x(n)| <= 2n + 1 <= 3n on a long chain
    assert LatticeGraph.chain(12).kappa == pytest.approx(3.0)


def test_open_chain_class_counts():
    g = LatticeGraph.chain(8)
    fam = partition_family(g, 4)
    assert [fam.n_classes(n) for n in range(5)] == [1, 3, 5, 7, 8]
    assert verify_separation(fam).passed


def test_periodic_residue_needs_room():
    g = LatticeGraph.chain(6, periodic=True)
    with pytest.raises(ScaleTooLargeError):
        separating_partition_zv(g, 3)
    fam = partition_family(g, 6)
    assert fam.slices[3].kind == "singleton"
    assert verify_separation(fam).passed
    with pytest.raises(ScaleTooLargeError):
        partition_family(g, 3, fallback=False)


@given(st.integers(2, 14), st.booleans(), st.integers(0, 4))
def test_partitions_separate(L, per, n):
    g = LatticeGraph.chain(L, per)
    fam = partition_family(g, n)
    rec = verify_separation(fam)
    assert rec.passed
    for m in fam.scales:
        sl = fam.slices[m]
        for cl in sl.classes:
            for x, y in itertools.combinations(sorted(cl), 2):
                assert not (sl.regions[x] & sl.regions[y])


def test_square_partition():
    g = LatticeGraph.torus([6, 6])
    fam = partition_family(g, 2)
    assert fam.n_classes(1) == 9
    assert verify_separation(fam).passed


def test_growth_constant():
    g = LatticeGraph.chain(10)
    fam = partition_family(g, 3, zeta=1.0)
    assert growth_constant(fam.slices, 1.0) == pytest.approx(3.0)
    assert fam.c == pytest.approx(3.0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cloudinspect.geometry import GeometryError, PointCloud
from cloudinspect.spatial import KdTree, build, nearest, within_radius
from oracles import brute_nearest, brute_within, euclid


def test_single_point():
    t = build(PointCloud([[0, 0, 0]]))
    assert len(t) == 1
    assert nearest(t, (1, 0, 0)) == (0, 1.0)
    assert nearest(t, (-3, 4, 0)) == (0, 5.0)


def test_two_points():
    t = KdTree([[0, 0, 0], [10, 0, 0]])
    assert t.nearest((4, 0, 0)) == (0, 4.0)


def test_empty():
    with pytest.raises(GeometryError, match="empty cloud"):
        KdTree(np.zeros((0, 3)))


def test_nearest_matches_linear_scan(rng):
    pts = rng.uniform(-1, 1, (10_000, 3))
    qs = rng.uniform(-1.2, 1.2, (1_000, 3))
    idx, dist = KdTree(pts).nearest_many(qs)
    for k, q in enumerate(qs):
        assert (idx[k], dist[k]) == brute_nearest(pts, q)


def test_ties_go_to_lowest_index():
    pts = np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
    t = KdTree(pts)
    assert t.nearest((0, 0, 0)) == (0, 1.0)
    # duplicate of index 0 at index 4
    assert t.nearest((2, 0, 0)) == (0, 1.0)
    # reversing the storage order flips the winner to the new lowest index
    assert KdTree(pts[::-1]).nearest((0, 0, 0)) == (0, 1.0)


def test_integer_lattice_ties(rng):
    g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    perm = rng.permutation(len(g))
    g = g[perm]
    qs = np.array([[0.5, 0.5, 0.5], [2.5, 3.0, 1.0], [5.5, 5.5, 5.5], [1.5, 2.5, 3.5]])
    idx, dist = KdTree(g).nearest_many(qs)
    for k, q in enumerate(qs):
        assert (idx[k], dist[k]) == brute_nearest(g, q)


class TestRadius:
    def test_zero_radius_hits_stored_point(self):
        t = KdTree([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        assert t.within_radius((1, 0, 0), 0.0) == [1]

    def test_far_query_is_empty(self):
        t = KdTree([[0, 0, 0], [1, 0, 0]])
        assert within_radius(t, (50, 50, 50), 0.5) == []

    def test_inclusive_boundary(self):
        t = KdTree([[0, 0, 0], [1, 0, 0], [0, 2, 0]])
        assert t.within_radius((0, 0, 0), 1.0) == [0, 1]

    def test_negative(self):
        with pytest.raises(GeometryError, match="invalid radius"):
            KdTree([[0, 0, 0]]).within_radius((0, 0, 0), -0.1)

    def test_matches_brute_force(self, rng):
        pts = rng.uniform(-1, 1, (3000, 3))
        t = KdTree(pts)
        for q in rng.uniform(-1, 1, (100, 3)):
            assert t.within_radius(q, 0.3) == brute_within(pts, q, 0.3)

    def test_pairs_within(self, rng):
        pts = rng.uniform(0, 1, (300, 3))
        got = KdTree(pts).pairs_within(0.1)
        want = [(i, j) for i in range(300) for j in range(i + 1, 300) if euclid(pts[i], pts[j]) <= 0.1]
        assert [tuple(p) for p in got.tolist()] == want


def test_nearest_other_distances(rng):
    pts = rng.normal(size=(500, 3))
    pts[7] = pts[3]  # an exact duplicate
    got = KdTree(pts).nearest_other_distances()
    for i in range(len(pts)):
        others = np.delete(np.arange(len(pts)), i)
        assert got[i] == euclid(pts[others], pts[i]).min()
    assert got[3] == got[7] == 0.0


clouds = st.integers(1, 2_000).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-10, 10, width=32))
)


@settings(max_examples=40, deadline=None)
@given(clouds, arrays(np.float64, (5, 3), elements=st.floats(-12, 12, width=32)))
def test_property_nearest_is_argmin(pts, qs):
    idx, dist = KdTree(pts).nearest_many(qs)
    for k, q in enumerate(qs):
        assert (idx[k], dist[k]) == brute_nearest(pts, q)


@settings(max_examples=30, deadline=None)
@given(clouds, st.randoms(use_true_random=False), st.floats(0, 5))
def test_property_permutation_invariance(pts, rnd, r):
    perm = np.array(rnd.sample(range(len(pts)), len(pts)), dtype=np.int64)
    a, b = KdTree(pts), KdTree(pts[perm])
    q = pts[0] + 0.37
    # distances agree exactly; indices agree through the permutation
    ia, da = a.nearest(q)
    ib, db = b.nearest(q)
    assert da == db
    assert euclid(pts[ia], q) == euclid(pts[perm[ib]], q)
    assert sorted(perm[b.within_radius(q, r)].tolist()) == a.within_radius(q, r)

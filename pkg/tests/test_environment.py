import numpy as np
import pytest

from hyperm.environment import (
    GEO_TOL,
    Halfspace,
    Partition,
    Region,
    box_halfspaces,
    voronoi_partition,
)
from hyperm.errors import GeometryError, OutsideEnvironmentError

from conftest import UNIT_BOX, two_half_partition


def test_halfspace_normalization():
    h = Halfspace([3.0, 4.0], 10.0)
    assert abs(np.linalg.norm(h.g) - 1.0) < 1e-12
    assert h.b == pytest.approx(2.0)
    with pytest.raises(GeometryError):
        Halfspace([0.0, 0.0], 1.0)


def test_region_drift_bound():
    with pytest.raises(GeometryError):
        Region(0, box_halfspaces(UNIT_BOX), [1.0, 0.0])


def test_locate_interior_facet_outside():
    part = two_half_partition()
    assert part.locate([0.25, 0.5]) == frozenset({0})
    assert part.locate([0.5, 0.5]) == frozenset({0, 1})
    with pytest.raises(OutsideEnvironmentError):
        part.locate([2.0, 0.0])


def test_boundary_segments_two_halves():
    part = two_half_partition()
    segs = part.boundary_segments(0)
    assert len(segs) == 4
    shared = [s for s in segs if s.region_ids == frozenset({0, 1})]
    assert len(shared) == 1
    assert shared[0].length == pytest.approx(1.0)
    xs = np.array([shared[0].p0[0], shared[0].p1[0]])
    assert np.allclose(xs, 0.5)


def test_boundary_segments_single_region():
    part = Partition([Region(0, box_halfspaces(UNIT_BOX), [0, 0])])
    segs = part.boundary_segments(0)
    assert len(segs) == 4
    assert all(s.region_ids == frozenset({0}) for s in segs)
    assert sum(s.length for s in segs) == pytest.approx(4.0)


def test_boundary_segments_tjunction_split():
    # left half vs two right quadrants: left's shared facet must split in two
    hs = box_halfspaces(UNIT_BOX)
    left = Region(0, hs + [Halfspace([1, 0], 0.5)], [0, 0])
    ru = Region(1, hs + [Halfspace([-1, 0], -0.5), Halfspace([0, -1], -0.5)], [0, 0])
    rl = Region(2, hs + [Halfspace([-1, 0], -0.5), Halfspace([0, 1], 0.5)], [0, 0])
    part = Partition([left, ru, rl])
    segs = part.boundary_segments(0)
    shared = sorted(
        (s for s in segs if len(s.region_ids) == 2),
        key=lambda s: min(s.p0[1], s.p1[1]),
    )
    assert len(shared) == 2
    assert shared[0].region_ids == frozenset({0, 2})
    assert shared[1].region_ids == frozenset({0, 1})
    assert all(s.length == pytest.approx(0.5) for s in shared)


def test_voronoi_internal_segments_have_two_regions():
    rng = np.random.default_rng(5)
    seeds = rng.uniform(0.1, 0.9, size=(10, 2))
    part = voronoi_partition(seeds, UNIT_BOX)
    lo, hi = np.asarray(UNIT_BOX)
    for rid in range(10):
        for seg in part.boundary_segments(rid):
            mid = seg.midpoint
            on_outer = np.any(np.abs(mid - lo) < 1e-9) or np.any(np.abs(mid - hi) < 1e-9)
            assert len(seg.region_ids) == (1 if on_outer else 2), (rid, mid)


def test_sample_boundary_length_density():
    part = Partition([Region(0, box_halfspaces(UNIT_BOX), [0, 0])])
    rng = np.random.default_rng(0)
    pts = np.array([part.sample_boundary(0, rng) for _ in range(10_000)])
    for axis, value in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)):
        frac = np.mean(np.abs(pts[:, axis] - value) < 1e-9)
        assert abs(frac - 0.25) < 0.02


def test_sample_boundary_weighted_density():
    # 2:1 rectangle: long edges twice as likely as short ones
    hs = [
        Halfspace([-1, 0], 0.0),
        Halfspace([1, 0], 2.0),
        Halfspace([0, -1], 0.0),
        Halfspace([0, 1], 1.0),
    ]
    part = Partition([Region(0, hs, [0, 0])])
    rng = np.random.default_rng(1)
    pts = np.array([part.sample_boundary(0, rng) for _ in range(10_000)])
    long_frac = np.mean((np.abs(pts[:, 1]) < 1e-9) | (np.abs(pts[:, 1] - 1) < 1e-9))
    assert abs(long_frac - 2.0 / 3.0) < 0.03


def test_sample_boundary_deterministic_and_inside():
    part = two_half_partition()
    a = [part.sample_boundary(0, np.random.default_rng(7)) for _ in range(50)]
    b = [part.sample_boundary(0, np.random.default_rng(7)) for _ in range(50)]
    assert np.allclose(a, b)
    region = part.region(0)
    G, bb = region.matrix
    for p in a:
        assert np.max(G @ p - bb) <= GEO_TOL


def test_voronoi_trivial_cases():
    part = voronoi_partition(np.array([[0.4, 0.6]]), UNIT_BOX)
    assert len(part) == 1
    assert part.region(0).contains([0.99, 0.01])

    part2 = voronoi_partition(np.array([[0.25, 0.5], [0.75, 0.5]]), UNIT_BOX)
    assert part2.locate([0.25, 0.5]) == frozenset({0})
    assert part2.locate([0.75, 0.5]) == frozenset({1})
    assert part2.locate([0.5, 0.25]) == frozenset({0, 1})


def test_voronoi_rejects_bad_seeds():
    with pytest.raises(GeometryError):
        voronoi_partition(np.array([[0.5, 0.5], [0.5, 0.5]]), UNIT_BOX)
    with pytest.raises(GeometryError):
        voronoi_partition(np.array([[1.5, 0.5]]), UNIT_BOX)


def test_partition_statistical_invariants():
    rng = np.random.default_rng(11)
    seeds = rng.uniform(0.05, 0.95, size=(10, 2))
    part = voronoi_partition(seeds, UNIT_BOX)
    pts = part.sample_box(100_000, np.random.default_rng(3))
    counts = part.membership_counts(pts)
    assert np.all(counts >= 1)  # coverage
    multi = counts > 1
    assert np.all(part.facet_distance(pts[multi]) <= 10 * GEO_TOL)  # disjoint interiors
    for r in part.regions:
        for h in r.halfspaces:
            assert abs(np.linalg.norm(h.g) - 1.0) < 1e-12

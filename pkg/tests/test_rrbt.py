import numpy as np
import pytest

from hyperm import dynamics
from hyperm.environment import Partition, voronoi_partition
from hyperm.errors import UnreachableError
from hyperm.rrbt import distance_matrix, grow_tree

from conftest import UNIT_BOX, scalar_target, two_half_partition, unit_square_region


def test_single_region_tree():
    part = Partition([unit_square_region()])
    tree = grow_tree([0.4, 0.6], part, 50, np.random.default_rng(0))
    assert tree.active == {0}
    for n in tree.nodes[1:]:
        assert n.parent == 0  # every boundary sample connects straight to root
        assert n.cost == pytest.approx(np.linalg.norm(n.position - tree.nodes[0].position))


def test_activation_spreads_through_facet():
    part = two_half_partition()
    tree = grow_tree([0.25, 0.5], part, 200, np.random.default_rng(1))
    assert tree.active == {0, 1}
    first_shared = next(n for n in tree.nodes[1:] if 1 in n.regions)
    assert first_shared.position[0] == pytest.approx(0.5, abs=1e-9)


def test_all_regions_eventually_active():
    rng = np.random.default_rng(17)
    seeds = rng.uniform(0.08, 0.92, size=(10, 2))
    part = voronoi_partition(seeds, UNIT_BOX)
    tree = grow_tree(seeds[0], part, 2000, np.random.default_rng(2))
    assert tree.active == set(range(10))


def test_monotone_activation_and_cost_consistency():
    part = two_half_partition(drift_left=(0.2, 0.1), drift_right=(-0.1, 0.2))
    tree = grow_tree([0.3, 0.4], part, 5, np.random.default_rng(3))
    sizes = [len(tree.active)]
    for _ in range(40):
        tree.grow(5, np.random.default_rng(None) if False else np.random.default_rng(_))
        sizes.append(len(tree.active))
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    # recompute each node's cost along its parent chain
    for n in tree.nodes[1:]:
        total = 0.0
        node = n
        while node.parent is not None:
            parent = tree.nodes[node.parent]
            d = part.region(node.edge_region).drift
            total += dynamics.min_transit_time(node.position, parent.position, d)
            node = parent
        assert total == pytest.approx(n.cost, abs=1e-9)


def test_connect_trivial_cases():
    part = Partition([unit_square_region()])
    tree = grow_tree([0.5, 0.5], part, 100, np.random.default_rng(4))
    res = tree.connect([0.5, 0.5])
    assert res.cost == 0.0
    assert len(res.waypoints) == 1 and not res.legs

    res2 = tree.connect([0.2, 0.2])
    assert res2.cost == pytest.approx(np.linalg.norm(np.array([0.2, 0.2]) - 0.5))


def test_connect_two_halves_converges_to_shortest_path():
    part = two_half_partition()
    tree = grow_tree([0.25, 0.5], part, 2000, np.random.default_rng(42))
    res = tree.connect([0.75, 0.5])
    assert 0.5 <= res.cost <= 0.55
    assert sum(l.duration for l in res.legs) == pytest.approx(res.cost, abs=1e-9)


def test_connect_cost_nonincreasing_in_iterations():
    part = two_half_partition()
    y = [0.75, 0.5]
    costs = []
    tree = grow_tree([0.25, 0.5], part, 200, np.random.default_rng(7))
    rng = np.random.default_rng(7)
    tree = grow_tree([0.25, 0.5], part, 0, rng)
    for _ in range(6):
        tree.grow(300, rng)
        try:
            costs.append(tree.connect(y).cost)
        except UnreachableError:
            costs.append(np.inf)
    assert all(a >= b - 1e-12 for a, b in zip(costs, costs[1:]))


def test_connect_unreachable():
    part = two_half_partition()
    tree = grow_tree([0.25, 0.5], part, 0, np.random.default_rng(0))
    with pytest.raises(UnreachableError):
        tree.connect([0.75, 0.5])  # region 1 not active yet


def test_distance_matrix_symmetry_zero_drift():
    rng = np.random.default_rng(23)
    seeds = rng.uniform(0.1, 0.9, size=(6, 2))
    part = voronoi_partition(seeds, UNIT_BOX)
    targets = [scalar_target(tid=i, pos=seeds[i], sigma=0.02, rho=0.05) for i in range(3)]
    dist = distance_matrix(
        targets, part, 1500, lambda i: np.random.default_rng(100 + i)
    )
    assert np.allclose(np.diag(dist.costs), 0.0)
    for i in range(3):
        for j in range(3):
            if i != j:
                a, b = dist.costs[i, j], dist.costs[j, i]
                assert abs(a - b) / max(a, b) < 0.05


def test_distance_matrix_two_targets_one_region():
    part = Partition([unit_square_region()])
    targets = [
        scalar_target(tid=0, pos=(0.2, 0.5), sigma=0.02, rho=0.05),
        scalar_target(tid=1, pos=(0.8, 0.5), sigma=0.02, rho=0.05),
    ]
    dist = distance_matrix(targets, part, 100, lambda i: np.random.default_rng(i))
    assert dist.costs[0, 1] == pytest.approx(0.6, abs=1e-9)
    assert dist.costs[1, 0] == pytest.approx(0.6, abs=1e-9)


def test_distance_matrix_drift_asymmetry_ratio():
    # uniform drift 0.5 to the right, collinear targets: upwind/downwind ratio 3
    part = two_half_partition(drift_left=(0.5, 0), drift_right=(0.5, 0))
    targets = [
        scalar_target(tid=0, pos=(0.25, 0.5), sigma=0.02, rho=0.05),
        scalar_target(tid=1, pos=(0.75, 0.5), sigma=0.02, rho=0.05),
    ]
    dist = distance_matrix(targets, part, 3000, lambda i: np.random.default_rng(50 + i))
    downwind = dist.costs[0, 1]  # with the wind
    upwind = dist.costs[1, 0]
    assert downwind == pytest.approx(0.5 / 1.5, rel=0.05)
    assert upwind == pytest.approx(0.5 / 0.5, rel=0.05)
    assert upwind / downwind == pytest.approx(3.0, rel=0.1)


def test_tree_dump_roundtrip_counts():
    part = two_half_partition()
    tree = grow_tree([0.25, 0.5], part, 100, np.random.default_rng(5))
    d = tree.to_dict()
    assert len(d["nodes"]) == len(tree.nodes)
    assert d["nodes"][0]["parent"] is None
    assert set(d["active_regions"]) == tree.active

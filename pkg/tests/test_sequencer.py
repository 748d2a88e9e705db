import itertools
import logging

import numpy as np
import pytest

from hyperm.environment import Halfspace, Partition, Region, box_halfspaces, voronoi_partition
from hyperm.errors import UnreachableError
from hyperm.rrbt import distance_matrix
from hyperm.sequencer import (
    build_switching_segments,
    plan_cycle,
    plan_from_dict,
    plan_to_dict,
    solve_tsp,
    _two_opt,
)

from conftest import UNIT_BOX, scalar_target, two_half_partition


def brute_force_tsp(costs):
    K = len(costs)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(1, K)):
        order = (0,) + perm
        c = sum(costs[order[k], order[(k + 1) % K]] for k in range(K))
        if c < best_cost - 1e-15:
            best, best_cost = order, c
    return best, best_cost


def test_tsp_symmetric_triangle():
    costs = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    order, cost = solve_tsp(costs)
    assert cost == pytest.approx(4.0)
    assert sorted(order) == [0, 1, 2]
    assert order[0] == 0


def test_tsp_matches_brute_force_fuzz():
    rng = np.random.default_rng(77)
    for trial in range(100):
        K = int(rng.integers(3, 9))
        costs = rng.uniform(0.1, 10.0, (K, K))
        np.fill_diagonal(costs, 0.0)
        order, cost = solve_tsp(costs)
        ref_order, ref_cost = brute_force_tsp(costs)
        assert cost == pytest.approx(ref_cost, abs=1e-9), trial
        assert sorted(order) == list(range(K))
        # reported cost equals the sum along the cycle
        csum = sum(costs[order[k], order[(k + 1) % K]] for k in range(K))
        assert abs(csum - cost) < 1e-12


def test_tsp_exact_not_worse_than_heuristic():
    rng = np.random.default_rng(8)
    for _ in range(20):
        costs = rng.uniform(0.5, 5.0, (8, 8))
        np.fill_diagonal(costs, 0.0)
        _, exact = solve_tsp(costs)
        _, heur = _two_opt(costs)
        assert exact <= heur + 1e-9


def test_two_opt_local_optimality_certificate():
    rng = np.random.default_rng(15)
    costs = rng.uniform(0.5, 5.0, (14, 14))
    np.fill_diagonal(costs, 0.0)
    order, cost = solve_tsp(costs)  # K > 12 -> heuristic path
    K = len(order)
    tour = list(order)
    for i in range(1, K - 1):
        for j in range(i + 1, K):
            cand = tour[:i] + tour[i : j + 1][::-1] + tour[j + 1 :]
            c = sum(costs[cand[k], cand[(k + 1) % K]] for k in range(K))
            assert c >= cost - 1e-9


def test_tsp_rejects_infinite_arc():
    costs = np.array([[0.0, np.inf], [1.0, 0.0]])
    with pytest.raises(UnreachableError, match="0->1"):
        solve_tsp(costs)


def _planned_two_targets(drift=(0, 0)):
    part = two_half_partition(drift_left=drift, drift_right=drift, t_left=0, t_right=1)
    targets = [
        scalar_target(tid=0, pos=(0.25, 0.5), sigma=0.05, rho=0.15),
        scalar_target(tid=1, pos=(0.75, 0.5), sigma=0.05, rho=0.15),
    ]
    dist = distance_matrix(targets, part, 800, lambda i: np.random.default_rng(i))
    return part, targets, dist


def test_switching_segments_adjacent_regions_degenerate():
    part, targets, dist = _planned_two_targets()
    segments = build_switching_segments((0, 1), dist, part, targets)
    assert len(segments) == 2
    for seg in segments:
        # shared facet: single waypoint, zero switching time
        assert seg.duration == pytest.approx(0.0, abs=1e-9)
        assert len(seg.waypoints) == 1
        assert seg.exit_point[0] == pytest.approx(0.5, abs=1e-9)
        assert np.allclose(seg.exit_point, seg.entry_point)


def test_switching_segment_intermediate_region_euclidean():
    # three vertical strips, targets in the outer two, zero drift
    hs = box_halfspaces(UNIT_BOX)
    r0 = Region(0, hs + [Halfspace([1, 0], 1.0 / 3)], [0, 0], 0)
    r1 = Region(1, hs + [Halfspace([-1, 0], -1.0 / 3), Halfspace([1, 0], 2.0 / 3)], [0, 0])
    r2 = Region(2, hs + [Halfspace([-1, 0], -2.0 / 3)], [0, 0], 1)
    part = Partition([r0, r1, r2])
    targets = [
        scalar_target(tid=0, pos=(0.15, 0.5), sigma=0.04, rho=0.1),
        scalar_target(tid=1, pos=(0.85, 0.5), sigma=0.04, rho=0.1),
    ]
    dist = distance_matrix(targets, part, 2500, lambda i: np.random.default_rng(200 + i))
    segments = build_switching_segments((0, 1), dist, part, targets)
    seg = segments[0]
    assert all(l.region_id == 1 for l in seg.legs)
    geom = sum(np.linalg.norm(l.end - l.start) for l in seg.legs)
    assert seg.duration == pytest.approx(geom, abs=1e-9)  # zero drift: time = length
    assert abs(seg.duration - 1.0 / 3) < 0.05  # near-direct crossing of the middle strip


def test_switching_total_matches_sequence_bookkeeping():
    part, targets, dist = _planned_two_targets(drift=(0.2, 0.1))
    plan = plan_cycle(targets, part, dist)
    assert plan.sequence.total_switching_time == pytest.approx(
        sum(s.duration for s in plan.switches), abs=1e-9
    )
    assert tuple(sorted(plan.sequence.order)) == (0, 1)
    for k, m in enumerate(plan.monitors):
        # entry of monitor k is the previous switch's entry point
        prev = plan.switches[(k - 1) % len(plan.switches)]
        assert np.allclose(m.entry, prev.entry_point)
        assert np.allclose(m.exit, plan.switches[k].exit_point)
        assert m.min_duration >= 0


def test_third_target_region_warning(caplog):
    # targets in outer strips, a third target in the middle strip on the path
    hs = box_halfspaces(UNIT_BOX)
    r0 = Region(0, hs + [Halfspace([1, 0], 1.0 / 3)], [0, 0], 0)
    r1 = Region(1, hs + [Halfspace([-1, 0], -1.0 / 3), Halfspace([1, 0], 2.0 / 3)], [0, 0], 2)
    r2 = Region(2, hs + [Halfspace([-1, 0], -2.0 / 3)], [0, 0], 1)
    part = Partition([r0, r1, r2])
    targets = [
        scalar_target(tid=0, pos=(0.15, 0.5), sigma=0.04, rho=0.1),
        scalar_target(tid=1, pos=(0.85, 0.5), sigma=0.04, rho=0.1),
        scalar_target(tid=2, pos=(0.5, 0.5), sigma=0.04, rho=0.1),
    ]
    dist = distance_matrix(targets, part, 1500, lambda i: np.random.default_rng(300 + i))
    with caplog.at_level(logging.WARNING, logger="hyperm.sequencer"):
        build_switching_segments((0, 1), dist, part, targets)
    assert any("traverses region" in r.message for r in caplog.records)


def test_single_target_degenerate_plan(caplog):
    part = Partition([Region(0, box_halfspaces(UNIT_BOX), [0, 0], 0)])
    targets = [scalar_target(tid=0, pos=(0.5, 0.5), sigma=0.1, rho=0.3)]
    with caplog.at_level(logging.WARNING, logger="hyperm.sequencer"):
        plan = plan_cycle(targets, part, None)
    assert plan.K == 1 and not plan.switches
    assert any("degenerate" in r.message for r in caplog.records)


def test_plan_dict_roundtrip():
    part, targets, dist = _planned_two_targets(drift=(0.1, -0.2))
    plan = plan_cycle(targets, part, dist)
    data = plan_to_dict(plan, part, targets)
    plan2 = plan_from_dict(data, part, targets)
    assert plan2.sequence.order == plan.sequence.order
    assert np.allclose(plan2.switching_durations(), plan.switching_durations())
    for a, b in zip(plan.monitors, plan2.monitors):
        assert np.allclose(a.entry, b.entry) and np.allclose(a.exit, b.exit)
        assert a.min_duration == pytest.approx(b.min_duration)

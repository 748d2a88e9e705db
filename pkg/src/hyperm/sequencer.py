"""Visiting-sequence computation and assembly of the fixed switching segments.

The visiting order comes from a directed TSP over the planner's
target-to-target transit costs: exact subset dynamic programming up to 12
targets, nearest-neighbor construction plus directed 2-opt beyond that.
Switching segments are the boundary-to-boundary portions of the planned
paths; travel inside the two endpoint target regions belongs to the
monitoring problems and is excluded from the switching durations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .dynamics import min_transit_time
from .environment import GEO_TOL, Partition
from .errors import GeometryError, UnreachableError
from .rrbt import ConnectResult, DistanceMatrix, Leg

log = logging.getLogger(__name__)

EXACT_TSP_LIMIT = 12


@dataclass(frozen=True, eq=False)
class VisitingSequence:
    """Cyclic target visiting order (each target once per cycle)."""

    order: tuple
    total_switching_time: float


@dataclass(eq=False)
class SwitchingSegment:
    """Fixed boundary-to-boundary transit between consecutive target regions."""

    from_target: int
    to_target: int
    exit_point: np.ndarray  # on the boundary of the from-region
    entry_point: np.ndarray  # on the boundary of the to-region
    legs: List[Leg]
    duration: float

    @property
    def waypoints(self) -> list:
        if not self.legs:
            return [self.exit_point]
        return [self.legs[0].start] + [l.end for l in self.legs]


@dataclass(eq=False)
class MonitorSpec:
    """Boundary conditions of one monitoring segment."""

    target_id: int
    region_id: int
    entry: np.ndarray
    exit: np.ndarray
    min_duration: float  # minimum transit time entry -> exit in this region


@dataclass(eq=False)
class CyclePlan:
    """Periodic plan: visiting order, switching segments, monitoring specs."""

    sequence: VisitingSequence
    monitors: List[MonitorSpec]
    switches: List[SwitchingSegment]
    tsp_cost: float

    @property
    def K(self) -> int:
        return len(self.monitors)

    def switching_durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.switches]) if self.switches else np.zeros(0)


def _cycle_cost(costs: np.ndarray, order) -> float:
    return float(sum(costs[order[k], order[(k + 1) % len(order)]] for k in range(len(order))))


def _validate_matrix(costs: np.ndarray):
    costs = np.asarray(costs, dtype=float)
    K = costs.shape[0]
    if costs.shape != (K, K):
        raise ValueError("cost matrix must be square")
    for i in range(K):
        for j in range(K):
            if i != j and not np.isfinite(costs[i, j]):
                raise UnreachableError(f"no finite transit cost for arc {i}->{j}")
    return costs


def _held_karp(costs: np.ndarray) -> tuple:
    """Exact minimum directed Hamiltonian cycle through node 0."""
    K = len(costs)
    full = (1 << K) - 1
    # dp[(mask, last)] = (cost, parent); mask always contains bit 0
    dp = {(1 | (1 << k), k): (costs[0, k], 0) for k in range(1, K)}
    for size in range(3, K + 1):
        new = {}
        for (mask, last), (c, _) in dp.items():
            if bin(mask).count("1") != size - 1:
                continue
            for nxt in range(1, K):
                if mask & (1 << nxt):
                    continue
                m2 = mask | (1 << nxt)
                cand = c + costs[last, nxt]
                cur = new.get((m2, nxt))
                if cur is None or cand < cur[0] - 1e-15 or (
                    abs(cand - cur[0]) <= 1e-15 and last < cur[1]
                ):
                    new[(m2, nxt)] = (cand, last)
        dp.update(new)
    # all equally cheap closures, lexicographically smallest reconstruction wins
    best_cost = min(dp[(full, last)][0] + costs[last, 0] for last in range(1, K))
    candidates = []
    for last in range(1, K):
        total = dp[(full, last)][0] + costs[last, 0]
        if total <= best_cost + 1e-12:
            seq = [last]
            mask = full
            node = last
            while node != 0:
                _, parent = dp[(mask, node)]
                mask ^= 1 << node
                node = parent
                seq.append(node)
            candidates.append(tuple(reversed(seq)))
    return min(candidates), best_cost


def _two_opt(costs: np.ndarray) -> tuple:
    """Nearest-neighbor tour improved by directed 2-opt to a local optimum."""
    K = len(costs)
    tour = [0]
    remaining = set(range(1, K))
    while remaining:
        last = tour[-1]
        nxt = min(remaining, key=lambda j: (costs[last, j], j))
        tour.append(nxt)
        remaining.discard(nxt)
    best = _cycle_cost(costs, tour)
    improved = True
    while improved:
        improved = False
        move = None
        for i in range(1, K - 1):
            for j in range(i + 1, K):
                cand = tour[:i] + tour[i : j + 1][::-1] + tour[j + 1 :]
                c = _cycle_cost(costs, cand)
                if c < best - 1e-12 and (move is None or c < move[0]):
                    move = (c, cand)
        if move is not None:
            best, tour = move[0], move[1]
            improved = True
    return tuple(tour), best


def solve_tsp(costs: np.ndarray) -> tuple:
    """Directed Hamiltonian cycle over the cost matrix.

    Returns (order, cost) with the order canonically rotated to start at
    index 0. Exact for up to EXACT_TSP_LIMIT nodes, heuristic beyond.
    """
    costs = _validate_matrix(costs)
    K = len(costs)
    if K == 1:
        return (0,), 0.0
    if K == 2:
        return (0, 1), float(costs[0, 1] + costs[1, 0])
    if K <= EXACT_TSP_LIMIT:
        return _held_karp(costs)
    return _two_opt(costs)


def _on_boundary(p, region, tol=1e-7) -> bool:
    G, b = region.matrix
    vals = G @ np.asarray(p, dtype=float) - b
    return bool(np.max(vals) <= tol and np.max(vals) >= -tol)


def _slice_path(res: ConnectResult, from_region, to_region) -> tuple:
    """Boundary-to-boundary sub-path of a planned target-to-target path.

    Exit index: last waypoint on the from-region boundary. Entry index: first
    waypoint on the to-region boundary.
    """
    wps = res.waypoints
    exit_idx = max(
        (l for l, w in enumerate(wps) if _on_boundary(w, from_region)), default=None
    )
    entry_idx = min(
        (l for l, w in enumerate(wps) if _on_boundary(w, to_region)), default=None
    )
    if exit_idx is None or entry_idx is None or exit_idx > entry_idx:
        raise GeometryError(
            "planned path does not cross the endpoint region boundaries in order"
        )
    return exit_idx, entry_idx


def build_switching_segments(
    order,
    dist: DistanceMatrix,
    partition: Partition,
    targets,
) -> List[SwitchingSegment]:
    """Extract the fixed switching segments for each consecutive target pair."""
    K = len(order)
    segments = []
    for k in range(K):
        j, i = order[k], order[(k + 1) % K]
        res = dist.paths[(j, i)]
        from_region = partition.region(_region_of(targets[j], partition))
        to_region = partition.region(_region_of(targets[i], partition))
        e, f = _slice_path(res, from_region, to_region)
        legs = res.legs[e:f]
        duration = float(sum(l.duration for l in legs))
        for leg in legs:
            resident = partition.region(leg.region_id).target_id
            if resident is not None and resident not in (targets[j].id, targets[i].id):
                log.warning(
                    "switching path %d->%d traverses region %d containing target %d",
                    targets[j].id,
                    targets[i].id,
                    leg.region_id,
                    resident,
                )
        segments.append(
            SwitchingSegment(
                from_target=targets[j].id,
                to_target=targets[i].id,
                exit_point=np.asarray(res.waypoints[e], dtype=float),
                entry_point=np.asarray(res.waypoints[f], dtype=float),
                legs=list(legs),
                duration=duration,
            )
        )
    return segments


def _region_of(target, partition: Partition) -> int:
    for r in partition.regions:
        if r.target_id == target.id:
            return r.id
    # fall back to geometric containment
    ids = partition.locate(target.position)
    return min(ids)


def plan_cycle(targets, partition: Partition, dist: Optional[DistanceMatrix]) -> CyclePlan:
    """Assemble the full periodic plan from the planner outputs."""
    if len(targets) == 1:
        log.warning("single-target scenario: degenerate plan without switching")
        tgt = targets[0]
        rid = _region_of(tgt, partition)
        monitor = MonitorSpec(tgt.id, rid, tgt.position.copy(), tgt.position.copy(), 0.0)
        seq = VisitingSequence((tgt.id,), 0.0)
        return CyclePlan(seq, [monitor], [], 0.0)
    order_idx, tsp_cost = solve_tsp(dist.costs)
    order = tuple(targets[i].id for i in order_idx)
    switches = build_switching_segments(order_idx, dist, partition, targets)
    K = len(order)
    monitors = []
    for k in range(K):
        tgt = targets[order_idx[k]]
        rid = _region_of(tgt, partition)
        entry = switches[(k - 1) % K].entry_point
        exit_ = switches[k].exit_point
        lb = min_transit_time(entry, exit_, partition.region(rid).drift)
        monitors.append(MonitorSpec(tgt.id, rid, entry.copy(), exit_.copy(), lb))
    total_sw = float(sum(s.duration for s in switches))
    return CyclePlan(VisitingSequence(order, total_sw), monitors, switches, tsp_cost)


def plan_to_dict(plan: CyclePlan, partition: Partition, targets) -> dict:
    """JSON-ready plan dump including display geometry for downstream tools."""
    return {
        "sequence": list(plan.sequence.order),
        "total_switching_time": plan.sequence.total_switching_time,
        "tsp_cost": plan.tsp_cost,
        "monitors": [
            {
                "target": m.target_id,
                "region": m.region_id,
                "entry": m.entry.tolist(),
                "exit": m.exit.tolist(),
                "min_duration": m.min_duration,
            }
            for m in plan.monitors
        ],
        "switches": [
            {
                "from": s.from_target,
                "to": s.to_target,
                "exit_point": s.exit_point.tolist(),
                "entry_point": s.entry_point.tolist(),
                "duration": s.duration,
                "legs": [
                    {
                        "start": l.start.tolist(),
                        "end": l.end.tolist(),
                        "region": l.region_id,
                        "duration": l.duration,
                    }
                    for l in s.legs
                ],
            }
            for s in plan.switches
        ],
        "regions": [
            {
                "id": r.id,
                "polygon": r.vertices.tolist(),
                "drift": r.drift.tolist(),
                "target": r.target_id,
            }
            for r in partition.regions
        ],
        "targets": [
            {
                "id": t.id,
                "position": t.position.tolist(),
                "quality": {
                    "kind": t.quality.kind,
                    "sigma": t.quality.sigma,
                    "rho": t.quality.rho,
                    "ring_radius": t.quality.ring_radius,
                },
            }
            for t in targets
        ],
        "bbox": partition.bbox.tolist(),
    }


def plan_from_dict(data: dict, partition: Partition, targets) -> CyclePlan:
    monitors = [
        MonitorSpec(
            m["target"],
            m["region"],
            np.array(m["entry"]),
            np.array(m["exit"]),
            m["min_duration"],
        )
        for m in data["monitors"]
    ]
    switches = [
        SwitchingSegment(
            s["from"],
            s["to"],
            np.array(s["exit_point"]),
            np.array(s["entry_point"]),
            [
                Leg(np.array(l["start"]), np.array(l["end"]), l["region"], l["duration"])
                for l in s["legs"]
            ],
            s["duration"],
        )
        for s in data["switches"]
    ]
    seq = VisitingSequence(tuple(data["sequence"]), data["total_switching_time"])
    return CyclePlan(seq, monitors, switches, data["tsp_cost"])

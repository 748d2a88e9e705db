"""Sampling-based global planner over the partition's boundary network.

Grows a tree rooted at a target position whose non-root nodes all lie on
region boundaries. Each edge is a straight-line minimum-time transit inside
one region (the line between two points of a convex cell stays inside it),
so the cost-to-root of a node is the total transit time to reach the root.
Regions become active once some tree node touches them; newly sampled
boundary points always connect because they are drawn from active regions.
There is no rewiring: node costs are fixed at insertion.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import min_transit_time, min_transit_times
from .environment import Partition
from .errors import UnreachableError

log = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-9


@dataclass(eq=False)
class RrbtNode:
    index: int
    position: np.ndarray
    regions: frozenset
    parent: Optional[int]  # None for the root
    cost: float
    edge_region: Optional[int]  # region of the transit to the parent
    edge_time: float


@dataclass(frozen=True, eq=False)
class Leg:
    """One straight-line transit inside a single region."""

    start: np.ndarray
    end: np.ndarray
    region_id: int
    duration: float


@dataclass(eq=False)
class ConnectResult:
    waypoints: list
    legs: list
    cost: float


class RrbtTree:
    """Insert-only search tree of boundary points with costs-to-root."""

    def __init__(self, root, partition: Partition, root_target: Optional[int] = None):
        self.partition = partition
        self.root_target = root_target
        root = np.asarray(root, dtype=float)
        regions = partition.locate(root)
        self.nodes = [RrbtNode(0, root, regions, None, 0.0, None, 0.0)]
        self.active = set(regions)
        self._by_region = {rid: [0] for rid in regions}
        cap = 256
        self._pos = np.empty((cap, 2))
        self._pos[0] = root
        self._cost = np.empty(cap)
        self._cost[0] = 0.0
        self._n = 1

    def _append(self, node: RrbtNode):
        if self._n == len(self._pos):
            self._pos = np.vstack([self._pos, np.empty_like(self._pos)])
            self._cost = np.concatenate([self._cost, np.empty_like(self._cost)])
        self._pos[self._n] = node.position
        self._cost[self._n] = node.cost
        self._n += 1
        self.nodes.append(node)
        for rid in node.regions:
            self._by_region.setdefault(rid, []).append(node.index)
        self.active.update(node.regions)

    def _best_parent(self, b: np.ndarray, b_regions):
        """Cheapest (cost, parent, region) connection of b through any shared region.

        Ties prefer the lowest parent insertion index, then the lowest region id.
        """
        best = None
        for rid in sorted(b_regions):
            ids = self._by_region.get(rid)
            if not ids:
                continue
            idx = np.asarray(ids)
            drift = self.partition.region(rid).drift
            dts = min_transit_times(b, self._pos[idx], drift)
            totals = dts + self._cost[idx]
            k = int(np.argmin(totals))
            # resolve float ties toward the lowest node index
            tie = np.nonzero(totals <= totals[k] + 1e-15)[0]
            if len(tie) > 1:
                k = int(tie[np.argmin(idx[tie])])
            cand = (float(totals[k]), int(idx[k]), rid, float(dts[k]))
            if best is None or cand[0] < best[0] - 1e-15 or (
                abs(cand[0] - best[0]) <= 1e-15 and cand[1] < best[1]
            ):
                best = cand
        return best

    def grow(self, iterations: int, rng: np.random.Generator):
        """Run the sample/connect/activate loop for a number of iterations."""
        for _ in range(iterations):
            rid = int(sorted(self.active)[rng.integers(len(self.active))])
            b = self.partition.sample_boundary(rid, rng)
            b_regions = self.partition.locate(b, tol=10 * 1e-9)
            near = [
                i
                for r2 in b_regions
                for i in self._by_region.get(r2, [])
                if np.linalg.norm(self._pos[i] - b) < DUPLICATE_TOL
            ]
            if near:
                continue
            best = self._best_parent(b, b_regions)
            if best is None:  # cannot happen: b was sampled from an active region
                continue
            cost, parent, region, dt = best
            self._append(
                RrbtNode(self._n, b, frozenset(b_regions), parent, cost, region, dt)
            )

    def connect(self, y) -> ConnectResult:
        """Minimum-cost path from y to the root through existing nodes."""
        y = np.asarray(y, dtype=float)
        y_regions = self.partition.locate(y)
        if not (set(y_regions) & self.active):
            raise UnreachableError(
                f"point ({y[0]:.4g}, {y[1]:.4g}) lies in no active region"
            )
        best = self._best_parent(y, y_regions)
        if best is None:
            raise UnreachableError(
                f"no tree node shares a region with ({y[0]:.4g}, {y[1]:.4g})"
            )
        cost, parent, region, dt = best
        waypoints = [y]
        legs = []
        if dt > 0.0 or np.linalg.norm(y - self._pos[parent]) > 1e-12:
            legs.append(Leg(y, self.nodes[parent].position.copy(), region, dt))
            waypoints.append(self.nodes[parent].position.copy())
        node = self.nodes[parent]
        while node.parent is not None:
            nxt = self.nodes[node.parent]
            legs.append(Leg(node.position.copy(), nxt.position.copy(), node.edge_region, node.edge_time))
            waypoints.append(nxt.position.copy())
            node = nxt
        return ConnectResult(waypoints, legs, cost)

    def to_dict(self) -> dict:
        return {
            "root_target": self.root_target,
            "active_regions": sorted(self.active),
            "nodes": [
                {
                    "index": n.index,
                    "position": n.position.tolist(),
                    "regions": sorted(n.regions),
                    "parent": n.parent,
                    "cost": n.cost,
                    "edge_region": n.edge_region,
                    "edge_time": n.edge_time,
                }
                for n in self.nodes
            ],
        }


def grow_tree(
    root,
    partition: Partition,
    max_iter: int,
    rng: np.random.Generator,
    root_target: Optional[int] = None,
) -> RrbtTree:
    tree = RrbtTree(root, partition, root_target)
    tree.grow(max_iter, rng)
    return tree


@dataclass(eq=False)
class DistanceMatrix:
    """Directed target-to-target transit costs and realizing paths.

    Entry (j, i) is the cost from target j's position to target i's position,
    obtained by connecting p_j to the tree rooted at p_i.
    """

    costs: np.ndarray
    paths: dict  # (j, i) -> ConnectResult
    trees: list


def distance_matrix(
    targets,
    partition: Partition,
    max_iter: int,
    rng_for_tree,
) -> DistanceMatrix:
    """Grow one tree per target and evaluate all directed pair connections.

    rng_for_tree maps a target index to an independent Generator so trees are
    reproducible regardless of growth order.
    """
    K = len(targets)
    if K < 2:
        raise ValueError("distance matrix needs at least two targets")
    trees = []
    for i, tgt in enumerate(targets):
        trees.append(
            grow_tree(tgt.position, partition, max_iter, rng_for_tree(i), root_target=tgt.id)
        )
    costs = np.zeros((K, K))
    paths = {}
    for i, tree in enumerate(trees):
        for j, src in enumerate(targets):
            if i == j:
                continue
            try:
                res = tree.connect(src.position)
            except UnreachableError as exc:
                raise UnreachableError(
                    f"target {src.id} cannot reach target {targets[i].id}: {exc}"
                ) from exc
            costs[j, i] = res.cost
            paths[(j, i)] = res
    return DistanceMatrix(costs, paths, trees)

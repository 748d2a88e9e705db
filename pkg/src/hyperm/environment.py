"""Convex polyhedral partition of the mission space.

Regions are intersections of halfspaces with a constant drift field each.
Queries (containment, boundary enumeration, boundary sampling) are pure;
the PRNG passed to sampling calls is the only mutable state.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GeometryError, OutsideEnvironmentError

GEO_TOL = 1e-9  # absolute point-on-facet tolerance, space units


@dataclass(frozen=True, eq=False)
class Halfspace:
    """Inequality g.x <= b with unit outward normal g."""

    g: np.ndarray
    b: float

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(2)
        norm = float(np.linalg.norm(g))
        if norm < 1e-14:
            raise GeometryError("halfspace normal must be nonzero")
        object.__setattr__(self, "g", g / norm)
        object.__setattr__(self, "b", float(self.b) / norm)

    def value(self, p) -> float:
        """Signed distance to the facet plane; <= 0 inside."""
        return float(self.g @ np.asarray(p, dtype=float) - self.b)


def _enumerate_vertices(G: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    """Vertices of {x : Gx <= b}, ordered counterclockwise."""
    n = len(G)
    pts = []
    for i, j in itertools.combinations(range(n), 2):
        A = np.vstack([G[i], G[j]])
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(det) < 1e-12:
            continue
        x = np.linalg.solve(A, np.array([b[i], b[j]]))
        if np.max(G @ x - b) <= 10 * tol:
            pts.append(x)
    if not pts:
        raise GeometryError("region has no vertices (empty or unbounded)")
    pts = np.array(pts)
    # dedupe
    keep = []
    for p in pts:
        if all(np.linalg.norm(p - q) > 1e-9 for q in keep):
            keep.append(p)
    if len(keep) < 3:
        raise GeometryError("region is degenerate (fewer than 3 vertices)")
    v = np.array(keep)
    c = v.mean(axis=0)
    order = np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))
    return v[order]


@dataclass(frozen=True, eq=False)
class Region:
    """Convex cell with id, halfspace description, drift field, optional target."""

    id: int
    halfspaces: tuple
    drift: np.ndarray
    target_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "halfspaces", tuple(self.halfspaces))
        d = np.asarray(self.drift, dtype=float).reshape(2)
        if np.linalg.norm(d) >= 1.0:
            raise GeometryError(
                f"region {self.id}: drift norm {np.linalg.norm(d):.4f} must be < 1"
            )
        object.__setattr__(self, "drift", d)
        G = np.array([h.g for h in self.halfspaces])
        bv = np.array([h.b for h in self.halfspaces])
        object.__setattr__(self, "_G", G)
        object.__setattr__(self, "_b", bv)
        object.__setattr__(self, "_vertices", _enumerate_vertices(G, bv, GEO_TOL))

    @property
    def matrix(self):
        """(G, b) arrays with Gx <= b describing the region."""
        return self._G, self._b

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    def contains(self, p, tol: float = GEO_TOL) -> bool:
        return bool(np.max(self._G @ np.asarray(p, dtype=float) - self._b) <= tol)

    def interior_distance(self, p) -> float:
        """Distance-like margin to the boundary; positive inside."""
        return float(-np.max(self._G @ np.asarray(p, dtype=float) - self._b))


@dataclass(frozen=True, eq=False)
class BoundarySegment:
    """Maximal boundary piece shared by a fixed set of regions."""

    region_ids: frozenset
    p0: np.ndarray
    p1: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)


class Partition:
    """Pairwise-disjoint convex cells covering a box-bounded mission space."""

    def __init__(self, regions: Sequence[Region], bbox=None):
        self.regions = tuple(regions)
        ids = [r.id for r in self.regions]
        if ids != list(range(len(self.regions))):
            raise GeometryError("region ids must be 0..P-1 in order")
        allv = np.vstack([r.vertices for r in self.regions])
        if bbox is None:
            bbox = np.array([allv.min(axis=0), allv.max(axis=0)])
        self.bbox = np.asarray(bbox, dtype=float).reshape(2, 2)
        self._all_vertices = allv
        self._segcache = {}

    def __len__(self):
        return len(self.regions)

    def region(self, rid: int) -> Region:
        return self.regions[rid]

    def try_locate(self, p, tol: float = GEO_TOL) -> frozenset:
        """Ids of all regions whose inequalities hold at p; empty if outside."""
        p = np.asarray(p, dtype=float)
        return frozenset(
            r.id for r in self.regions if np.max(r._G @ p - r._b) <= tol
        )

    def locate(self, p, tol: float = GEO_TOL) -> frozenset:
        """Like try_locate but raises OutsideEnvironmentError on an empty result."""
        ids = self.try_locate(p, tol)
        if not ids:
            raise OutsideEnvironmentError(np.asarray(p, dtype=float))
        return ids

    def membership_counts(self, pts: np.ndarray, tol: float = GEO_TOL) -> np.ndarray:
        """Number of containing regions for each row of pts (vectorized)."""
        pts = np.asarray(pts, dtype=float)
        counts = np.zeros(len(pts), dtype=int)
        for r in self.regions:
            inside = np.max(pts @ r._G.T - r._b, axis=1) <= tol
            counts += inside
        return counts

    def facet_distance(self, pts: np.ndarray) -> np.ndarray:
        """Min |g.p - b| over all facets, for each row of pts."""
        pts = np.asarray(pts, dtype=float)
        best = np.full(len(pts), np.inf)
        for r in self.regions:
            vals = np.abs(pts @ r._G.T - r._b)
            best = np.minimum(best, vals.min(axis=1))
        return best

    def boundary_segments(self, region_id: int):
        """Segments partitioning the region boundary, annotated with neighbors.

        Facets are split wherever another region's vertex lies on them, so every
        segment has a constant set of incident regions (1 on the outer boundary
        of the mission space, 2 on internal facets).
        """
        if region_id in self._segcache:
            return self._segcache[region_id]
        region = self.regions[region_id]
        G, b = region.matrix
        segments = []
        for k in range(len(G)):
            g, bk = G[k], b[k]
            on_facet = np.abs(region.vertices @ g - bk) <= 10 * GEO_TOL
            facet_pts = region.vertices[on_facet]
            if len(facet_pts) < 2:
                continue  # redundant halfspace: no facet
            tangent = np.array([-g[1], g[0]])
            t_own = facet_pts @ tangent
            lo, hi = t_own.min(), t_own.max()
            if hi - lo <= 1e-9:
                continue  # degenerate facet
            # breakpoints: all partition vertices lying on this facet
            av = self._all_vertices
            on_line = np.abs(av @ g - bk) <= 10 * GEO_TOL
            t_all = av[on_line] @ tangent
            ts = np.unique(np.concatenate([[lo, hi], t_all[(t_all > lo) & (t_all < hi)]]))
            base = facet_pts[np.argmin(t_own)]
            for t0, t1 in zip(ts[:-1], ts[1:]):
                if t1 - t0 <= 1e-9:
                    continue
                p0 = base + (t0 - lo) * tangent
                p1 = base + (t1 - lo) * tangent
                ids = self.try_locate(0.5 * (p0 + p1), tol=10 * GEO_TOL)
                segments.append(BoundarySegment(frozenset(ids), p0, p1))
        if not segments:
            raise GeometryError(f"region {region_id} has no boundary segments")
        result = tuple(segments)
        self._segcache[region_id] = result
        return result

    def sample_boundary(self, region_id: int, rng: np.random.Generator) -> np.ndarray:
        """Point on the region boundary, density proportional to arc length."""
        segs = self.boundary_segments(region_id)
        lengths = np.array([s.length for s in segs])
        k = rng.choice(len(segs), p=lengths / lengths.sum())
        s = segs[k]
        return s.p0 + rng.uniform() * (s.p1 - s.p0)

    def sample_box(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.bbox
        return lo + rng.uniform(size=(n, 2)) * (hi - lo)

    def validate_statistical(self, rng: np.random.Generator, n: int = 100_000):
        """Monte-Carlo coverage and disjoint-interior checks.

        Raises GeometryError if any bbox sample is uncovered or any sample away
        from every facet lies in two regions.
        """
        pts = self.sample_box(n, rng)
        counts = self.membership_counts(pts)
        if np.any(counts == 0):
            bad = pts[counts == 0][0]
            raise GeometryError(f"partition does not cover ({bad[0]:.6g}, {bad[1]:.6g})")
        multi = counts > 1
        if np.any(multi):
            near = self.facet_distance(pts[multi]) <= 10 * GEO_TOL
            if not np.all(near):
                bad = pts[multi][~near][0]
                raise GeometryError(
                    f"regions overlap at ({bad[0]:.6g}, {bad[1]:.6g})"
                )


def box_halfspaces(bbox) -> list:
    """Four halfspaces of an axis-aligned box [[x0,y0],[x1,y1]]."""
    (x0, y0), (x1, y1) = np.asarray(bbox, dtype=float)
    return [
        Halfspace(np.array([-1.0, 0.0]), -x0),
        Halfspace(np.array([1.0, 0.0]), x1),
        Halfspace(np.array([0.0, -1.0]), -y0),
        Halfspace(np.array([0.0, 1.0]), y1),
    ]


def voronoi_cells(seeds: np.ndarray, bbox) -> list:
    """Halfspace lists of the box-clipped Voronoi cells (redundancy pruned)."""
    seeds = np.asarray(seeds, dtype=float)
    if seeds.ndim != 2 or seeds.shape[1] != 2 or len(seeds) < 1:
        raise GeometryError("need at least one 2-D seed")
    lo, hi = np.asarray(bbox, dtype=float)
    if np.any(seeds < lo) or np.any(seeds > hi):
        raise GeometryError("all Voronoi seeds must lie inside the bbox")
    for i, j in itertools.combinations(range(len(seeds)), 2):
        if np.linalg.norm(seeds[i] - seeds[j]) < 1e-12:
            raise GeometryError(f"duplicate Voronoi seeds {i} and {j}")
    cells = []
    for i, si in enumerate(seeds):
        hs = box_halfspaces(bbox)
        for j, sj in enumerate(seeds):
            if j == i:
                continue
            # |x-si| <= |x-sj|  <=>  2(sj-si).x <= |sj|^2-|si|^2
            hs.append(Halfspace(2 * (sj - si), float(sj @ sj - si @ si)))
        G = np.array([h.g for h in hs])
        bv = np.array([h.b for h in hs])
        verts = _enumerate_vertices(G, bv, GEO_TOL)
        essential = []
        for h in hs:
            if np.sum(np.abs(verts @ h.g - h.b) <= 10 * GEO_TOL) >= 2:
                essential.append(h)
        cells.append(essential)
    return cells


def voronoi_partition(seeds, bbox, drifts=None, target_ids=None) -> Partition:
    """Partition whose cells are the box-clipped Voronoi cells of the seeds."""
    cells = voronoi_cells(seeds, bbox)
    if drifts is None:
        drifts = [np.zeros(2)] * len(cells)
    if target_ids is None:
        target_ids = [None] * len(cells)
    regions = [
        Region(i, cell, drifts[i], target_ids[i]) for i, cell in enumerate(cells)
    ]
    return Partition(regions, bbox=bbox)

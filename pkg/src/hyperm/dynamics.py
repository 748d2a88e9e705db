"""Time-optimal transit under constant drift and event-detected path integration.

Inside one region the agent obeys xdot = d + u with ||u|| <= 1 and ||d|| < 1.
The minimum point-to-point time is the positive root of
(1-|d|^2) T^2 + 2 (r.d) T - |r|^2 = 0 with r = y - x, and the realizing
control is the constant unit vector u = (r - T d)/T.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .environment import GEO_TOL, Partition, Region
from .errors import GeometryError, IntegrationError, OutsideEnvironmentError

EVENT_TIME_TOL = 1e-10  # bisection tolerance for region-crossing times


def min_transit_time(x, y, drift) -> float:
    """Minimum time from x to y under constant drift; inf if unreachable."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.asarray(drift, dtype=float)
    if d @ d >= 1.0:
        return float("inf")
    r = y - x
    r2 = float(r @ r)
    if r2 == 0.0:
        return 0.0
    rd = float(r @ d)
    a = 1.0 - float(d @ d)
    s = np.sqrt(rd * rd + a * r2)
    # stable quadratic root: avoid cancellation when rd > 0
    return float(r2 / (rd + s)) if rd > 0 else float((s - rd) / a)


def min_transit_times(x, ys: np.ndarray, drift) -> np.ndarray:
    """Vectorized min_transit_time from one point x to each row of ys."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(drift, dtype=float)
    r = np.asarray(ys, dtype=float) - x
    r2 = np.einsum("ij,ij->i", r, r)
    rd = r @ d
    a = 1.0 - float(d @ d)
    if a <= 0.0:
        return np.full(len(r), np.inf)
    s = np.sqrt(rd * rd + a * r2)
    denom = rd + s
    out = np.where(denom > 0, r2 / np.where(denom > 0, denom, 1.0), (s - rd) / a)
    out[r2 == 0.0] = 0.0
    return out


def transit_control(x, y, drift, duration: float) -> np.ndarray:
    """Constant control steering x to y in the given time (unit norm if optimal)."""
    if duration <= 0.0:
        return np.zeros(2)
    r = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return r / duration - np.asarray(drift, dtype=float)


@dataclass(frozen=True, eq=False)
class TransitPlan:
    """Straight-line minimum-time transit inside one region."""

    start: np.ndarray
    end: np.ndarray
    region_id: int
    duration: float
    control: np.ndarray

    def position(self, t: float) -> np.ndarray:
        if self.duration == 0.0:
            return self.start.copy()
        s = min(max(t, 0.0), self.duration)
        return self.start + s * (self.end - self.start) / self.duration


def transit_plan(x, y, region: Region) -> TransitPlan:
    """Minimum-time plan between two points of one region."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not region.contains(x, 10 * GEO_TOL):
        raise GeometryError(f"transit start outside region {region.id}")
    if not region.contains(y, 10 * GEO_TOL):
        raise GeometryError(f"transit end outside region {region.id}")
    T = min_transit_time(x, y, region.drift)
    u = transit_control(x, y, region.drift, T)
    return TransitPlan(x, y, region.id, T, u)


@dataclass(eq=False)
class PathTrace:
    """Sampled trajectory with active region ids and applied controls."""

    times: np.ndarray
    positions: np.ndarray
    region_ids: np.ndarray
    controls: np.ndarray

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,x,y,region,ux,uy\n")
            for t, p, r, u in zip(self.times, self.positions, self.region_ids, self.controls):
                fh.write(
                    f"{float(t)!r},{float(p[0])!r},{float(p[1])!r},{int(r)},"
                    f"{float(u[0])!r},{float(u[1])!r}\n"
                )


def _rk4_step(pos, t, h, drift, control: Callable):
    k1 = drift + control(t)
    k2 = drift + control(t + 0.5 * h)
    k3 = drift + control(t + 0.5 * h)
    k4 = drift + control(t + h)
    return pos + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_path(
    start,
    control: Callable[[float], np.ndarray],
    partition: Partition,
    t_end: float,
    dt: Optional[float] = None,
) -> PathTrace:
    """Fixed-step RK4 integration of xdot = d_region + u(t) with drift switching.

    Region crossings are located by bisection on the step fraction to within
    EVENT_TIME_TOL in time; the drift switches at the crossing sample.
    """
    if dt is None:
        dt = t_end / 100.0
    pos = np.asarray(start, dtype=float).copy()
    ids = partition.locate(pos)
    current = min(ids)
    times, positions, regions, controls = [0.0], [pos.copy()], [current], [np.asarray(control(0.0), dtype=float)]
    t = 0.0
    guard = 0
    while t < t_end - 1e-15:
        h = min(dt, t_end - t)
        u_now = np.asarray(control(t), dtype=float)
        if np.linalg.norm(u_now) > 1.0 + 1e-9:
            raise IntegrationError(f"control norm {np.linalg.norm(u_now):.6f} exceeds 1 at t={t:.6g}")
        region = partition.region(current)
        cand = _rk4_step(pos, t, h, region.drift, control)
        if region.contains(cand, GEO_TOL):
            pos, t = cand, t + h
        else:
            # bisect exit fraction: inside at lo, outside at hi
            lo, hi = 0.0, 1.0
            while (hi - lo) * h > EVENT_TIME_TOL:
                mid = 0.5 * (lo + hi)
                if region.contains(_rk4_step(pos, t, mid * h, region.drift, control), GEO_TOL):
                    lo = mid
                else:
                    hi = mid
            pos = _rk4_step(pos, t, hi * h, region.drift, control)
            t = t + hi * h
            here = partition.try_locate(pos, 10 * GEO_TOL)
            nxt = None
            for rid in sorted(here - {current}):
                r2 = partition.region(rid)
                v = r2.drift + np.asarray(control(t), dtype=float)
                if r2.contains(pos + 1e-7 * v, GEO_TOL):
                    nxt = rid
                    break
            if nxt is None:
                if not here or here == {current}:
                    raise OutsideEnvironmentError(pos)
                raise IntegrationError(
                    f"no transversal crossing at t={t:.6g} (sliding or stalled bisection)"
                )
            current = nxt
        times.append(t)
        positions.append(pos.copy())
        regions.append(current)
        controls.append(np.asarray(control(t), dtype=float))
        guard += 1
        if guard > 100 * int(np.ceil(t_end / dt)) + 1000:
            raise IntegrationError("event detection failed to make progress")
    return PathTrace(
        np.array(times), np.array(positions), np.array(regions, dtype=int), np.array(controls)
    )

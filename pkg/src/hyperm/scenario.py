"""Scenario files: mission geometry, target models, and run configuration.

A scenario either lists regions explicitly (halfspaces + drift) or gives
Voronoi seed points; drifts may be spelled out per region or drawn from a
seed (uniform in the unit disk, scaled by a maximum norm). All model
validity checks run at load time so downstream stages can assume a
well-formed problem.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .environment import Halfspace, Partition, Region, voronoi_cells
from .errors import GeometryError, ScenarioError
from .estimation import CovState, QualityField, Target
from .seeding import stream

DEFAULT_DRIFT_MAX_NORM = 0.5
_VALIDATE_SEED = 0x5EED  # load-time geometry checks use a fixed stream


@dataclass(eq=False)
class Scenario:
    partition: Partition
    targets: List[Target]
    omegas0: CovState
    seed: int
    planner: dict
    optimizer: dict

    def to_dict(self) -> dict:
        """Normalized explicit form; loading it back reproduces this scenario."""
        return {
            "bbox": self.partition.bbox.tolist(),
            "regions": [
                {
                    "halfspaces": [
                        {"g": h.g.tolist(), "b": h.b} for h in r.halfspaces
                    ],
                    "drift": r.drift.tolist(),
                }
                for r in self.partition.regions
            ],
            "targets": [
                {
                    "position": t.position.tolist(),
                    "A": t.A.tolist(),
                    "Q": t.Q.tolist(),
                    "H": t.H.tolist(),
                    "R": t.R.tolist(),
                    "quality": {
                        "kind": t.quality.kind,
                        "sigma": t.quality.sigma,
                        "rho": t.quality.rho,
                        "ring_radius": t.quality.ring_radius,
                    },
                    "omega0": self.omegas0[i].tolist(),
                }
                for i, t in enumerate(self.targets)
            ],
            "seed": self.seed,
            "planner": dict(self.planner),
            "optimizer": dict(self.optimizer),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def sample_unit_disk(rng: np.random.Generator) -> np.ndarray:
    r = np.sqrt(rng.uniform())
    th = 2.0 * np.pi * rng.uniform()
    return r * np.array([np.cos(th), np.sin(th)])


def _build_cells(data: dict) -> tuple:
    bbox = np.asarray(data["bbox"], dtype=float)
    if "regions" in data:
        cells = []
        drifts = []
        for spec in data["regions"]:
            cells.append(
                [Halfspace(np.asarray(h["g"], dtype=float), float(h["b"]))
                 for h in spec["halfspaces"]]
            )
            drifts.append(np.asarray(spec.get("drift", [0.0, 0.0]), dtype=float))
        return bbox, cells, drifts
    if "voronoi_seeds" in data:
        cells = voronoi_cells(np.asarray(data["voronoi_seeds"], dtype=float), bbox)
        drifts = [None] * len(cells)
        return bbox, cells, drifts
    raise ScenarioError("scenario needs either 'regions' or 'voronoi_seeds'")


def _quality_from(spec: dict, position) -> QualityField:
    return QualityField(
        kind=spec["kind"],
        center=position,
        sigma=float(spec["sigma"]),
        rho=float(spec["rho"]),
        ring_radius=float(spec.get("ring_radius", 0.0)),
    )


def load_scenario_dict(data: dict) -> Scenario:
    try:
        bbox, cells, drifts = _build_cells(data)
    except GeometryError as exc:
        raise ScenarioError(str(exc)) from exc
    if any(d is None for d in drifts):
        if "drift_seed" in data:
            rng = np.random.default_rng(int(data["drift_seed"]))
            max_norm = float(data.get("drift_max_norm", DEFAULT_DRIFT_MAX_NORM))
            if not 0.0 <= max_norm < 1.0:
                raise ScenarioError("drift_max_norm must lie in [0, 1)")
            drifts = [max_norm * sample_unit_disk(rng) for _ in cells]
        else:
            drifts = [np.zeros(2) for _ in cells]

    # provisional geometry (zero drift) to place targets in regions
    try:
        probe = Partition(
            [Region(i, c, np.zeros(2)) for i, c in enumerate(cells)], bbox=bbox
        )
    except GeometryError as exc:
        raise ScenarioError(str(exc)) from exc

    targets = []
    omegas0 = []
    region_of = {}
    for i, spec in enumerate(data.get("targets", [])):
        pos = np.asarray(spec["position"], dtype=float)
        ids = probe.try_locate(pos)
        if not ids:
            raise ScenarioError(f"target {i} position lies outside the environment")
        rid = min(ids)
        if rid in region_of.values():
            raise ScenarioError(f"region {rid} holds more than one target")
        region_of[i] = rid
        tgt = Target(
            id=i,
            position=pos,
            A=spec["A"],
            Q=spec["Q"],
            H=spec["H"],
            R=spec["R"],
            quality=_quality_from(spec["quality"], pos),
        )
        targets.append(tgt)
        om0 = np.asarray(spec.get("omega0", np.eye(tgt.m)), dtype=float)
        if om0.shape != (tgt.m, tgt.m) or np.min(np.linalg.eigvalsh(0.5 * (om0 + om0.T))) <= 0:
            raise ScenarioError(f"target {i}: omega0 must be SPD of size {tgt.m}")
        omegas0.append(0.5 * (om0 + om0.T))
        # compact support must fit inside the hosting region
        G, b = probe.region(rid).matrix
        margin = float(np.max(G @ pos - b))
        if margin > -tgt.quality.rho + 1e-12:
            raise ScenarioError(
                f"target {i}: support radius {tgt.quality.rho:.4g} exceeds the "
                f"distance {-margin:.4g} to the region boundary"
            )

    try:
        regions = [
            Region(i, c, drifts[i], target_id=next((t for t, r in region_of.items() if r == i), None))
            for i, c in enumerate(cells)
        ]
        partition = Partition(regions, bbox=bbox)
        partition.validate_statistical(stream(_VALIDATE_SEED, "load-check"), n=20_000)
    except GeometryError as exc:
        raise ScenarioError(str(exc)) from exc

    return Scenario(
        partition=partition,
        targets=targets,
        omegas0=CovState(omegas0),
        seed=int(data.get("seed", 0)),
        planner=dict(data.get("planner", {})),
        optimizer=dict(data.get("optimizer", {})),
    )


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    return load_scenario_dict(data)

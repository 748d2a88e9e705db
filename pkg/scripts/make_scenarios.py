"""Generate the bundled benchmark scenarios (small: 10 regions / 4 targets,
large: 20 regions / 10 targets).

Target cells are separated by filler cells so switching segments have
positive duration; support radii are sized from the actual cell geometry so
every quality field fits strictly inside its region.
"""
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from hyperm.environment import Partition, Region, voronoi_cells  # noqa: E402
from hyperm.scenario import load_scenario_dict, sample_unit_disk  # noqa: E402

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def support_radius(cells, bbox, idx, pos, frac=0.95):
    region = Region(idx, cells[idx], np.zeros(2))
    return frac * region.interior_distance(pos)


def make_small():
    bbox = [[0.0, 0.0], [1.0, 1.0]]
    target_seeds = [(0.17, 0.17), (0.83, 0.2), (0.82, 0.82), (0.18, 0.8)]
    filler_seeds = [
        (0.5, 0.1),
        (0.5, 0.52),
        (0.5, 0.9),
        (0.1, 0.5),
        (0.9, 0.52),
        (0.34, 0.63),
    ]
    seeds = target_seeds + filler_seeds
    cells = voronoi_cells(np.array(seeds), bbox)
    rng = np.random.default_rng(314)
    drifts = [0.35 * sample_unit_disk(rng) for _ in cells]

    targets = []
    scalar_models = [
        {"A": [[-0.10]], "Q": [[0.25]], "H": [[1.0]], "R": [[0.15]]},
        {"A": [[-0.05]], "Q": [[0.30]], "H": [[1.0]], "R": [[0.10]]},
        {"A": [[-0.12]], "Q": [[0.20]], "H": [[1.0]], "R": [[0.20]]},
    ]
    for i, pos in enumerate(target_seeds):
        rho = round(support_radius(cells, bbox, i, np.array(pos)), 4)
        if i == 2:  # one planar (2-state) target, one ring-shaped quality map
            spec = {
                "position": list(pos),
                "A": [[0.0, 0.8], [-0.8, -0.15]],
                "Q": [[0.30, 0.0], [0.0, 0.25]],
                "H": [[1.0, 0.0]],
                "R": [[0.05]],
                "quality": {
                    "kind": "ring",
                    "sigma": round(rho / 3.0, 4),
                    "rho": rho,
                    "ring_radius": round(rho / 3.0, 4),
                },
            }
        else:
            model = scalar_models[i % len(scalar_models)]
            spec = {
                "position": list(pos),
                **model,
                "quality": {"kind": "gaussian", "sigma": round(rho / 2.5, 4), "rho": rho},
            }
        targets.append(spec)

    return {
        "bbox": bbox,
        "voronoi_seeds": [list(s) for s in seeds],
        "drift": [d.tolist() for d in drifts],
        "targets": targets,
        "seed": 42,
        "planner": {"max_iter_per_region": 300},
        "optimizer": {
            "alpha0": 8.0,
            "eps_ss": 1e-4,
            "eps_tau": 2e-4,
            "max_cycles": 1500,
            "tau_margin": 1.0,
            "n_intervals": 40,
        },
    }


def make_large():
    bbox = [[0.0, 0.0], [1.0, 1.0]]
    # perturbed 5x4 grid of seeds; targets on a checkerboard so no two
    # target cells share a facet
    rng = np.random.default_rng(2718)
    seeds = []
    flags = []
    for gy in range(4):
        for gx in range(5):
            x = (gx + 0.5) / 5.0 + rng.uniform(-0.03, 0.03)
            y = (gy + 0.5) / 4.0 + rng.uniform(-0.03, 0.03)
            seeds.append((round(x, 4), round(y, 4)))
            flags.append((gx + gy) % 2 == 0)
    target_idx = [i for i, f in enumerate(flags) if f][:10]
    cells = voronoi_cells(np.array(seeds), bbox)
    drifts = [0.3 * sample_unit_disk(rng) for _ in cells]

    # reorder regions so targets come first (ids 0..9 host targets 0..9)
    order = target_idx + [i for i in range(len(seeds)) if i not in target_idx]
    seeds = [seeds[i] for i in order]
    cells = [cells[i] for i in order]
    drifts = [drifts[i] for i in order]

    targets = []
    for i in range(10):
        pos = np.array(seeds[i])
        rho = round(support_radius(cells, bbox, i, pos), 4)
        q = 0.15 + 0.02 * (i % 4)
        r = 0.08 + 0.03 * (i % 3)
        a = -0.05 - 0.02 * (i % 3)
        targets.append(
            {
                "position": pos.tolist(),
                "A": [[round(a, 3)]],
                "Q": [[round(q, 3)]],
                "H": [[1.0]],
                "R": [[round(r, 3)]],
                "quality": {"kind": "gaussian", "sigma": round(rho / 2.5, 4), "rho": rho},
            }
        )

    return {
        "bbox": bbox,
        "voronoi_seeds": [list(s) for s in seeds],
        "drift": [d.tolist() for d in drifts],
        "targets": targets,
        "seed": 1234,
        "planner": {"max_iter_per_region": 300},
        "optimizer": {
            "alpha0": 5.0,
            "eps_ss": 1e-4,
            "eps_tau": 2e-3,
            "max_cycles": 4000,
            "tau_margin": 1.0,
            "n_intervals": 40,
        },
    }


def main():
    OUT.mkdir(exist_ok=True)
    for name, data in (("small", make_small()), ("large", make_large())):
        # resolve voronoi seeds into the explicit region form so the bundled
        # files are self-contained
        scenario = load_scenario_dict(_explicit(data))
        path = OUT / f"{name}.json"
        scenario.save(path)
        reloaded = load_scenario_dict(json.loads(path.read_text()))
        assert reloaded.to_dict() == scenario.to_dict(), "round trip failed"
        print(f"{name}: {len(scenario.partition)} regions, {len(scenario.targets)} targets -> {path}")


def _explicit(data):
    """Resolve voronoi seeds + drift list into the explicit region form."""
    cells = voronoi_cells(np.array(data["voronoi_seeds"]), data["bbox"])
    regions = [
        {
            "halfspaces": [{"g": h.g.tolist(), "b": h.b} for h in cell],
            "drift": data["drift"][i],
        }
        for i, cell in enumerate(cells)
    ]
    out = {k: v for k, v in data.items() if k not in ("voronoi_seeds", "drift")}
    out["regions"] = regions
    return out


if __name__ == "__main__":
    main()

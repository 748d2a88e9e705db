import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hyperm.environment import Halfspace, Partition, Region, box_halfspaces
from hyperm.estimation import CovState, QualityField, Target

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"

UNIT_BOX = [[0.0, 0.0], [1.0, 1.0]]


def two_half_partition(drift_left=(0, 0), drift_right=(0, 0), t_left=None, t_right=None):
    """Unit square split at x = 0.5."""
    left = Region(0, box_halfspaces(UNIT_BOX) + [Halfspace([1, 0], 0.5)], drift_left, t_left)
    right = Region(1, box_halfspaces(UNIT_BOX) + [Halfspace([-1, 0], -0.5)], drift_right, t_right)
    return Partition([left, right])


def unit_square_region(drift=(0, 0), target_id=None, rid=0):
    return Region(rid, box_halfspaces(UNIT_BOX), drift, target_id)


def scalar_target(tid=0, pos=(0.5, 0.5), a=0.0, q=1.0, h=1.0, r=1.0,
                  sigma=0.15, rho=0.4, kind="gaussian", ring_radius=0.0):
    return Target(
        tid, pos, A=[[a]], Q=[[q]], H=[[h]], R=[[r]],
        quality=QualityField(kind, pos, sigma, rho, ring_radius),
    )


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """Full CLI pipeline on the bundled small scenario (plan, both optimize
    variants, a two-cycle replay). Shared by the acceptance tests."""
    outdir = tmp_path_factory.mktemp("small_run")
    env = {"HYPERM_LOG": "error"}
    def cli(*args):
        res = subprocess.run(
            [sys.executable, "-m", "hyperm", *args],
            capture_output=True, text=True, env={**__import__("os").environ, **env},
        )
        assert res.returncode == 0, f"{args}: {res.stderr}"
        return res
    cli("plan", str(SCENARIOS / "small.json"), "-o", str(outdir))
    cli("optimize", str(outdir), "--variant", "1")
    cli("optimize", str(outdir), "--variant", "2")
    cli("simulate", str(outdir), "--cycles", "2", "--variant", "1")
    return outdir


@pytest.fixture(scope="session")
def large_run(tmp_path_factory):
    """Full CLI pipeline on the bundled large scenario."""
    outdir = tmp_path_factory.mktemp("large_run")
    env = {"HYPERM_LOG": "error"}
    def cli(*args):
        res = subprocess.run(
            [sys.executable, "-m", "hyperm", *args],
            capture_output=True, text=True, env={**__import__("os").environ, **env},
        )
        assert res.returncode == 0, f"{args}: {res.stderr}"
        return res
    cli("plan", str(SCENARIOS / "large.json"), "-o", str(outdir))
    cli("optimize", str(outdir), "--variant", "1")
    cli("optimize", str(outdir), "--variant", "2")
    return outdir


def read_csv_columns(path):
    import csv

    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}

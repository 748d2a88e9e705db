"""Deterministic per-stage random streams derived from one run seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, stage: str, index: int = 0) -> np.random.Generator:
    """Generator for a named pipeline stage, independent of stage ordering.

    The child stream depends only on (seed, stage, index), so reruns and
    reordered stages reproduce identical draws.
    """
    tag = zlib.crc32(stage.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, int(index)]))

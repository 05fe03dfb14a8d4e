"""Deterministic, splittable random streams.

Every stochastic component draws from its own :class:`numpy.random.Generator`
derived from ``(master_seed, domain, *indices)`` via ``SeedSequence`` spawn
keys.  Adding new runs/components never perturbs existing streams, and two
processes given the same key produce identical draws.
"""
from __future__ import annotations

import numpy as np

# domain tags for spawn keys (never renumber; recorded in manifests)
DOM_RUN = 1        # one simulation run
DOM_SCENARIO = 2   # scenario-parameter sampling
DOM_TRAIN = 3      # network init + batch order
DOM_BINS = 4       # risk-bin calibration runs
DOM_DATASET = 5    # dataset subsampling
DOM_EVAL = 6       # bootstrap / permutation resampling


def seed_seq(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=tuple(key))


def make_rng(master: int, *key: int) -> np.random.Generator:
    """Generator for stream ``(master, *key)``; same key -> same draws."""
    return np.random.default_rng(seed_seq(master, *key))

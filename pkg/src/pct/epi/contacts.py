"""Two-layer contact model: fixed household cliques + random daily mixing.

Households are sampled once (sizes uniform on 1..household_max) and meet every
day regardless of behaviour level — quarantine removes only out-of-household
encounters.  Random mixing draws per-agent encounter stubs from a Poisson
whose rate scales with the global mobility factor and the agent's behaviour
multiplier, then pairs stubs uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ContactConfig


@dataclass
class Households:
    household_id: np.ndarray          # (N,)
    pairs: np.ndarray                 # (P, 2) all intra-household pairs, a < b
    members: list[np.ndarray]         # household index -> member agent ids


def assign_households(n: int, cfg: ContactConfig, rng: np.random.Generator) -> Households:
    household_id = np.empty(n, dtype=np.int64)
    members: list[np.ndarray] = []
    pair_rows = []
    start = 0
    while start < n:
        size = min(int(rng.integers(1, cfg.household_max + 1)), n - start)
        ids = np.arange(start, start + size)
        household_id[ids] = len(members)
        members.append(ids)
        if size > 1:
            a, b = np.triu_indices(size, k=1)
            pair_rows.append(np.column_stack([ids[a], ids[b]]))
        start += size
    pairs = np.concatenate(pair_rows) if pair_rows else np.empty((0, 2), dtype=np.int64)
    return Households(household_id, pairs, members)


def daily_contacts(hh: Households, mobility: float, multipliers: np.ndarray,
                   cfg: ContactConfig, rng: np.random.Generator,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Generate one day of qualifying encounters.

    Args:
        hh: household structure.
        mobility: global mobility scaling factor.
        multipliers: (N,) per-agent behaviour multiplier on out-of-household rate.
        cfg: contact constants.
        rng: per-day stream.

    Returns:
        (a, b, count, household_flag) arrays; a < b, pairs unique.
    """
    n = multipliers.shape[0]
    rows = []
    if hh.pairs.shape[0]:
        counts = 1 + rng.poisson(cfg.hh_extra_mean, hh.pairs.shape[0])
        rows.append((hh.pairs[:, 0], hh.pairs[:, 1], counts, np.ones(len(counts), bool)))

    stubs_per_agent = rng.poisson(cfg.out_rate * mobility * multipliers)
    stubs = np.repeat(np.arange(n), stubs_per_agent)
    if stubs.size >= 2:
        rng.shuffle(stubs)
        if stubs.size % 2:
            stubs = stubs[:-1]
        a, b = stubs[0::2], stubs[1::2]
        keep = a != b
        a, b = a[keep], b[keep]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        rows.append((lo, hi, np.ones(lo.size, dtype=np.int64), np.zeros(lo.size, bool)))

    if not rows:
        z = np.empty(0, dtype=np.int64)
        return z, z, z, np.empty(0, bool)

    a = np.concatenate([r[0] for r in rows])
    b = np.concatenate([r[1] for r in rows])
    count = np.concatenate([r[2] for r in rows])
    hh_flag = np.concatenate([r[3] for r in rows])

    # merge duplicate pairs (same-pair random encounters, or random + household)
    key = a * n + b
    order = np.argsort(key, kind="stable")
    key, a, b, count, hh_flag = key[order], a[order], b[order], count[order], hh_flag[order]
    uniq, inverse = np.unique(key, return_inverse=True)
    m_count = np.zeros(uniq.size, dtype=np.int64)
    np.add.at(m_count, inverse, count)
    m_hh = np.zeros(uniq.size, dtype=bool)
    np.logical_or.at(m_hh, inverse, hh_flag)
    first = np.searchsorted(key, uniq)
    return a[first], b[first], m_count, m_hh

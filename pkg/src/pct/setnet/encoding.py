"""Featurization of device observables for the set network.

Raw inputs per sample:

* 15 status rows (12 reported-symptom flags + 4 observed test-state one-hot);
* a 13-entry profile vector;
* a variable-length list of (day offset, risk level, count) clusters.

Counts are embedded with a fixed sinusoidal code: entry 2i is
``sin(n / 10000^i)`` and entry 2i+1 is ``cos(n / 10000^i)`` — no trainable
parameters, and nearby counts get nearby codes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DAY_WINDOW, N_SYMPTOMS
from ..tracing import Observables, PROFILE_DIM

#: per-day status feature width (symptom flags + test-state one-hot)
STATUS_DIM = N_SYMPTOMS + 4


def encode_count(n: int | np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of a repeat count into ``dim`` (even) entries."""
    if dim % 2:
        raise ValueError(f"encoding dim must be even, got {dim}")
    n_arr = np.asarray(n, dtype=np.float64)
    i = np.arange(dim // 2, dtype=np.float64)
    angles = n_arr[..., None] / np.power(10000.0, i)
    out = np.empty(n_arr.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def status_features(symptoms: np.ndarray, test_state: np.ndarray) -> np.ndarray:
    """(W, 12) flags + (W,) state codes -> (W, STATUS_DIM) float32."""
    onehot = np.eye(4, dtype=np.float32)[test_state]
    return np.concatenate([symptoms.astype(np.float32), onehot], axis=-1)


def day_offsets() -> np.ndarray:
    """phi_dd input for the 15 window days: (d' - d)/14 in [-1, 0]."""
    return (-np.arange(DAY_WINDOW + 1) / DAY_WINDOW).astype(np.float32)


def encode_observables(obs: Observables) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One sample -> (statuses (15, STATUS_DIM), profile (13,), clusters (C, 3))."""
    statuses = status_features(obs.symptoms, obs.test_state)
    clusters = np.array([(c.day_offset, c.risk_level, c.count) for c in obs.clusters],
                        dtype=np.int32).reshape(-1, 3)
    return statuses, obs.profile_vec.astype(np.float32), clusters


@dataclass
class EncodedSamples:
    """Columnar storage of encoded samples (ragged clusters via flat + bounds)."""

    statuses: np.ndarray        # (S, 15, STATUS_DIM) float32
    profile: np.ndarray         # (S, PROFILE_DIM) float32
    cluster_flat: np.ndarray    # (C_total, 3) int32 rows (offset, level, count)
    cluster_bounds: np.ndarray  # (S+1,) int64 slice bounds into cluster_flat
    target: np.ndarray          # (S, 15) float32
    run_id: np.ndarray          # (S,) int32
    agent_id: np.ndarray        # (S,) int32
    day: np.ndarray             # (S,) int32

    def __len__(self) -> int:
        return self.statuses.shape[0]

    def clusters_of(self, i: int) -> np.ndarray:
        return self.cluster_flat[self.cluster_bounds[i]:self.cluster_bounds[i + 1]]

    def subset(self, idx: np.ndarray) -> "EncodedSamples":
        lengths = np.diff(self.cluster_bounds)
        sel_len = lengths[idx]
        bounds = np.zeros(idx.size + 1, dtype=np.int64)
        np.cumsum(sel_len, out=bounds[1:])
        flat = np.concatenate([self.clusters_of(int(i)) for i in idx]) if idx.size \
            else np.empty((0, 3), dtype=np.int32)
        return EncodedSamples(self.statuses[idx], self.profile[idx], flat, bounds,
                              self.target[idx], self.run_id[idx],
                              self.agent_id[idx], self.day[idx])


def pack_samples(samples, run_id: int) -> EncodedSamples:
    """World `Sample` records -> columnar arrays (order preserved)."""
    s = len(samples)
    statuses = np.zeros((s, DAY_WINDOW + 1, STATUS_DIM), dtype=np.float32)
    profile = np.zeros((s, PROFILE_DIM), dtype=np.float32)
    target = np.zeros((s, DAY_WINDOW + 1), dtype=np.float32)
    agent = np.zeros(s, dtype=np.int32)
    day = np.zeros(s, dtype=np.int32)
    flats = []
    bounds = np.zeros(s + 1, dtype=np.int64)
    for i, sm in enumerate(samples):
        assert sm.target_source == "simulator_truth", "targets must come from the simulator"
        st, pr, cl = encode_observables(sm.obs)
        statuses[i], profile[i], target[i] = st, pr, sm.target
        agent[i], day[i] = sm.agent, sm.day
        flats.append(cl)
        bounds[i + 1] = bounds[i] + cl.shape[0]
    flat = np.concatenate(flats) if flats else np.empty((0, 3), dtype=np.int32)
    rid = np.full(s, run_id, dtype=np.int32)
    return EncodedSamples(statuses, profile, flat, bounds, target, rid, agent, day)


def concat_samples(parts: list[EncodedSamples]) -> EncodedSamples:
    if not parts:
        raise ValueError("no sample blocks to concatenate")
    bounds = [parts[0].cluster_bounds]
    for p in parts[1:]:
        bounds.append(p.cluster_bounds[1:] + bounds[-1][-1])
    return EncodedSamples(
        np.concatenate([p.statuses for p in parts]),
        np.concatenate([p.profile for p in parts]),
        np.concatenate([p.cluster_flat for p in parts]),
        np.concatenate(bounds),
        np.concatenate([p.target for p in parts]),
        np.concatenate([p.run_id for p in parts]),
        np.concatenate([p.agent_id for p in parts]),
        np.concatenate([p.day for p in parts]),
    )

"""Privacy-constrained risk-message protocol.

What travels between contacts is only a 4-bit risk level (16 equal-mass bins
over predicted infectiousness) plus an encounter day; receivers aggregate
messages into anonymous clusters keyed by (day offset, level) with a repeat
count.  Nothing in this module carries an agent identity — routing uses
rotating per-(pair, day) integer handles owned by the in-simulator mailbox.

Processing runs once per simulated day (the tick constant below allows a
finer cadence later); messages emitted on day t become visible to receivers
on day t+1.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import DAY_WINDOW, N_LEVELS

log = logging.getLogger("pct.tracing")

#: processing ticks per simulated day (1 = daily resolution)
TICKS_PER_DAY = 1


# --------------------------------------------------------------------------
# risk levels

class BinTableError(ValueError):
    """Raised for degenerate calibration data or malformed bin tables."""


@dataclass(frozen=True)
class RiskBinTable:
    """15 strictly increasing thresholds defining 16 half-open risk bins.

    Bin k covers [t_k, t_{k+1}) with t_0 = -inf conceptually pinned at 0 and
    t_16 = +inf, so quantize(0) = 0 and the top bin is unbounded.
    """

    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        t = np.asarray(self.thresholds, dtype=float)
        if t.shape != (N_LEVELS - 1,):
            raise BinTableError(f"expected {N_LEVELS - 1} thresholds, got {t.shape}")
        if not np.all(np.diff(t) > 0):
            raise BinTableError("thresholds must be strictly increasing")
        if not np.all(np.isfinite(t)):
            raise BinTableError("thresholds must be finite")

    @classmethod
    def uniform(cls) -> "RiskBinTable":
        """Placeholder table with thresholds k/16 — used before calibration."""
        return cls(tuple((k + 1) / N_LEVELS for k in range(N_LEVELS - 1)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(list(self.thresholds)) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RiskBinTable":
        return cls(tuple(json.loads(Path(path).read_text())))


def quantize(risk: float | np.ndarray, table: RiskBinTable) -> int | np.ndarray:
    """Map risk value(s) >= 0 to level(s) 0..15; monotone; NaN rejected."""
    arr = np.asarray(risk, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("quantize: NaN risk value")
    levels = np.searchsorted(np.asarray(table.thresholds), arr, side="right")
    return int(levels) if np.isscalar(risk) or arr.ndim == 0 else levels.astype(np.int64)


def fit_bins(risks: Iterable[float]) -> RiskBinTable:
    """Equal-mass thresholds at the 1/16 .. 15/16 empirical quantiles.

    Duplicate quantiles (atomic mass) are perturbed minimally upward to
    restore strict increase.  Requires >= 16 distinct values.
    """
    values = np.asarray(list(risks), dtype=float)
    if values.size and np.isnan(values).any():
        raise BinTableError("fit_bins: NaN in calibration risks")
    if np.unique(values).size < N_LEVELS:
        raise BinTableError(
            f"fit_bins needs >= {N_LEVELS} distinct values, got {np.unique(values).size}")
    qs = np.arange(1, N_LEVELS) / N_LEVELS
    thresholds = np.quantile(values, qs)
    for i in range(1, thresholds.size):
        if thresholds[i] <= thresholds[i - 1]:
            thresholds[i] = np.nextafter(thresholds[i - 1], np.inf)
    return RiskBinTable(tuple(float(t) for t in thresholds))


# --------------------------------------------------------------------------
# messages and clusters

@dataclass(frozen=True)
class EncounterMessage:
    """Initial message deposited at contact time: day + sender's current level."""

    encounter_day: int
    level: int
    transport_day: int


@dataclass(frozen=True)
class UpdateMessage:
    """Revision of a previously sent level for one encounter.

    ``handle`` is the pseudonymous routing handle (the only addressing
    information; receivers never learn sender identity).
    """

    encounter_day: int
    new_level: int
    old_level: int
    transport_day: int
    handle: int = -1

    def __post_init__(self) -> None:
        if not 0 <= self.transport_day - self.encounter_day <= DAY_WINDOW:
            raise ValueError(
                f"update for day {self.encounter_day} outside window at {self.transport_day}")


@dataclass(frozen=True)
class Cluster:
    """De-identified aggregate of received messages: (day offset, level, count)."""

    day_offset: int
    risk_level: int
    count: int


def _level_counts_to_clusters(by_day: dict[int, np.ndarray], now: int) -> dict[int, list[Cluster]]:
    out: dict[int, list[Cluster]] = {}
    for day, counts in sorted(by_day.items()):
        offset = now - day
        if not 0 <= offset <= DAY_WINDOW:
            continue
        clusters = [Cluster(offset, lvl, int(c)) for lvl, c in enumerate(counts) if c > 0]
        if clusters:
            out[offset] = clusters
    return out


def apply_message(by_day: dict[int, np.ndarray],
                  msg: EncounterMessage | UpdateMessage) -> int:
    """Fold one message into per-day level-count vectors.

    Returns the number of protocol anomalies (an update whose old level has
    no remaining mass is counted as a fresh message at its new level).
    """
    counts = by_day.get(msg.encounter_day)
    if counts is None:
        counts = by_day.setdefault(msg.encounter_day, np.zeros(N_LEVELS, dtype=np.int64))
    if isinstance(msg, EncounterMessage):
        counts[msg.level] += 1
        return 0
    if counts[msg.old_level] > 0:
        counts[msg.old_level] -= 1
        counts[msg.new_level] += 1
        return 0
    counts[msg.new_level] += 1
    return 1


def cluster_window(messages: Sequence[EncounterMessage | UpdateMessage],
                   now: int) -> dict[int, list[Cluster]]:
    """Group a window of received messages into per-day-offset cluster lists.

    Updates replace their old level's contribution (decrement old, increment
    new).  Replay order is transport day, ties broken by higher new level
    (last writer wins).  Messages older than the window are dropped.
    """
    def order(m: EncounterMessage | UpdateMessage) -> tuple[int, int]:
        lvl = m.level if isinstance(m, EncounterMessage) else m.new_level
        return (m.transport_day, lvl)

    by_day: dict[int, np.ndarray] = {}
    anomalies = 0
    for msg in sorted(messages, key=order):
        if now - msg.encounter_day > DAY_WINDOW:
            continue
        anomalies += apply_message(by_day, msg)
    if anomalies:
        log.warning("cluster_window: %d protocol anomalies (stale updates)", anomalies)
    return _level_counts_to_clusters(by_day, now)


# --------------------------------------------------------------------------
# per-agent protocol state + mailbox routing

@dataclass
class TracingState:
    """Protocol state one app instance keeps (all keys are absolute days)."""

    inbox: dict[int, np.ndarray] = field(default_factory=dict)      # day -> 16 level counts
    contact_log: dict[int, list[tuple[int, int]]] = field(default_factory=dict)  # day -> [(handle, count)]
    sent_level: dict[int, int] = field(default_factory=dict)        # day -> last sent level
    anomalies: int = 0

    def prune(self, now: int) -> None:
        for d in [d for d in self.inbox if now - d > DAY_WINDOW]:
            del self.inbox[d]
        for d in [d for d in self.contact_log if now - d > DAY_WINDOW]:
            del self.contact_log[d]
            self.sent_level.pop(d, None)

    def clusters(self, now: int) -> dict[int, list[Cluster]]:
        return _level_counts_to_clusters(self.inbox, now)


class Mailbox:
    """Routes messages between app instances via per-(pair, day) handles.

    The receiver of a handle learns nothing beyond (encounter day, level,
    count); handles rotate every (pair, day) so they cannot be linked across
    days.
    """

    def __init__(self) -> None:
        self._route: dict[int, int] = {}   # handle -> receiving agent id
        self._next_handle = 0

    def _new_handle(self, receiver: int) -> int:
        h = self._next_handle
        self._next_handle += 1
        self._route[h] = receiver
        return h

    def register_contact(self, states: dict[int, TracingState], a: int, b: int,
                         day: int, count: int, level_a: int, level_b: int,
                         graded: bool) -> None:
        """Record a qualifying contact between app users a and b.

        Each side logs a routing handle for later updates; under graded
        protocols both sides immediately deposit ``count`` encounter messages
        at their current level into the peer's inbox.
        """
        sa, sb = states[a], states[b]
        ha = self._new_handle(b)   # a sends to b via ha
        hb = self._new_handle(a)
        sa.contact_log.setdefault(day, []).append((ha, count))
        sb.contact_log.setdefault(day, []).append((hb, count))
        if graded:
            sa.sent_level.setdefault(day, level_a)
            sb.sent_level.setdefault(day, level_b)
            for _ in range(count):
                apply_message(sb.inbox, EncounterMessage(day, level_a, day))
                apply_message(sa.inbox, EncounterMessage(day, level_b, day))

    def peers_of(self, state: TracingState, since: int) -> list[int]:
        """Agent ids contacted on days >= since (used for binary notices)."""
        peers = []
        for day, entries in state.contact_log.items():
            if day >= since:
                peers.extend(self._route[h] for h, _ in entries)
        return peers

    def deliver(self, states: dict[int, TracingState],
                msgs: Iterable[UpdateMessage]) -> int:
        n = 0
        for msg in msgs:
            st = states[self._route[msg.handle]]
            st.anomalies += apply_message(st.inbox, msg)
            n += 1
        return n


# --------------------------------------------------------------------------
# what one device can see

# observed test-state codes (the sign of a pending result is never visible)
TEST_NONE, TEST_PENDING, TEST_POSITIVE, TEST_NEGATIVE = 0, 1, 2, 3

#: length of the observable profile vector: age/100, sex one-hot(3),
#: pre-existing conditions(8), carefulness
PROFILE_DIM = 13


@dataclass(frozen=True)
class Observables:
    """Everything one agent's device can see on one day.

    Contains only locally observable data: the agent's own profile and
    reported-status window plus de-identified message clusters — never raw
    contact identities or other agents' ground truth.  Row/entry ``k`` of the
    status arrays refers to day ``today - k``.
    """

    profile_vec: np.ndarray     # (PROFILE_DIM,) float32
    symptoms: np.ndarray        # (DAY_WINDOW+1, 12) uint8 reported flags
    test_state: np.ndarray      # (DAY_WINDOW+1,) uint8 observed TEST_* codes
    clusters: tuple[Cluster, ...]
    today: int

    def __post_init__(self) -> None:
        if self.symptoms.shape[0] != DAY_WINDOW + 1 or self.test_state.shape[0] != DAY_WINDOW + 1:
            raise ValueError("status window must cover exactly DAY_WINDOW + 1 days")
        for c in self.clusters:
            if not 0 <= c.day_offset <= DAY_WINDOW:
                raise ValueError(f"cluster offset {c.day_offset} outside window")

    def clusters_by_day(self) -> dict[int, list[Cluster]]:
        out: dict[int, list[Cluster]] = {}
        for c in self.clusters:
            out.setdefault(c.day_offset, []).append(c)
        return out

    def statuses(self) -> list:
        """Status window as HealthStatus records (today first)."""
        from .epi.disease import HealthStatus, TEST_STATE_NAMES
        return [
            HealthStatus(
                day=self.today - k,
                reported_symptoms=tuple(bool(v) for v in self.symptoms[k]),
                test_result=TEST_STATE_NAMES[int(self.test_state[k])],
                test_result_day=None,
            )
            for k in range(DAY_WINDOW + 1)
        ]


def process_inbox(state: TracingState, now: int,
                  y_prev_levels: Sequence[int],
                  y_new_levels: Sequence[int]) -> list[UpdateMessage]:
    """Emit update messages for every contact on days whose level changed.

    ``y_prev_levels[k]`` / ``y_new_levels[k]`` are the quantized estimates for
    the day ``now - k`` as of the previous/current tick.  All contacts on one
    day were last synced at the same level (``state.sent_level``), so a single
    comparison per day decides whether its contacts get updates.
    """
    if len(y_prev_levels) != DAY_WINDOW + 1 or len(y_new_levels) != DAY_WINDOW + 1:
        raise ValueError("histories must cover the full day window")
    out: list[UpdateMessage] = []
    for day, entries in state.contact_log.items():
        k = now - day
        if not 0 <= k <= DAY_WINDOW:
            continue
        new = int(y_new_levels[k])
        old = state.sent_level.get(day, int(y_prev_levels[k]))
        if new == old:
            continue
        state.sent_level[day] = new
        for handle, count in entries:
            out.extend(UpdateMessage(day, new, old, now, handle) for _ in range(count))
    return out

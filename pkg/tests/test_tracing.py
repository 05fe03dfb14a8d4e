import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pct.config import N_LEVELS
from pct.tracing import (BinTableError, Cluster, EncounterMessage, Mailbox,
                         RiskBinTable, TracingState, UpdateMessage,
                         apply_message, cluster_window, fit_bins,
                         process_inbox, quantize)

UNIFORM = RiskBinTable.uniform()


# ---------------------------------------------------------------------------
# quantize

def test_quantize_zero_maps_to_level_zero():
    assert quantize(0.0, UNIFORM) == 0


def test_quantize_top_bin_unbounded():
    assert quantize(UNIFORM.thresholds[-1], UNIFORM) == 15
    assert quantize(1e9, UNIFORM) == 15


def test_quantize_closed_form_on_sixteenths():
    # floor(0.40 * 16) = 6 with thresholds at k/16
    assert quantize(0.40, UNIFORM) == 6
    for level in range(16):
        mid = (level + 0.5) / 16
        assert quantize(mid, UNIFORM) == level


def test_quantize_vectorized_matches_scalar():
    vals = np.linspace(0, 1.2, 97)
    arr = quantize(vals, UNIFORM)
    assert arr.tolist() == [quantize(float(v), UNIFORM) for v in vals]


def test_quantize_nan_rejected():
    with pytest.raises(ValueError):
        quantize(float("nan"), UNIFORM)


@given(st.floats(min_value=0, max_value=10, allow_nan=False),
       st.floats(min_value=0, max_value=10, allow_nan=False))
def test_quantize_monotone(a, b):
    la, lb = quantize(a, UNIFORM), quantize(b, UNIFORM)
    if a <= b:
        assert la <= lb


# ---------------------------------------------------------------------------
# fit_bins

def test_fit_bins_uniform_held_out_mass():
    rng = np.random.default_rng(1)
    table = fit_bins(rng.random(100_000))
    held = rng.random(100_000)
    counts = np.bincount(quantize(held, table), minlength=16) / held.size
    assert np.all(np.abs(counts - 1 / 16) < 0.005)


def test_fit_bins_all_equal_rejected():
    with pytest.raises(BinTableError):
        fit_bins(np.full(1000, 0.3))


def test_fit_bins_too_few_distinct_rejected():
    with pytest.raises(BinTableError):
        fit_bins(np.tile(np.arange(15) / 15.0, 100))


def test_fit_bins_sixteen_atoms_one_per_bin():
    atoms = (np.arange(1, 17) / 100.0)
    table = fit_bins(np.repeat(atoms, 1000))
    levels = quantize(atoms, table)
    assert sorted(levels.tolist()) == list(range(16))


def test_bin_table_validation():
    with pytest.raises(BinTableError):
        RiskBinTable(tuple(np.zeros(15)))          # not strictly increasing
    with pytest.raises(BinTableError):
        RiskBinTable(tuple(np.arange(14) + 1.0))   # wrong count
    with pytest.raises(BinTableError):
        RiskBinTable(tuple([np.inf] + list(np.arange(14) + 1.0)))


def test_bin_table_round_trip(tmp_path):
    table = fit_bins(np.random.default_rng(0).random(5000))
    path = tmp_path / "bins.json"
    table.save(path)
    assert RiskBinTable.load(path) == table
    assert len(json.loads(path.read_text())) == 15


# ---------------------------------------------------------------------------
# messages + clustering

def test_update_message_window_checked():
    with pytest.raises(ValueError):
        UpdateMessage(encounter_day=0, new_level=3, old_level=1,
                      transport_day=20)   # > 14 days after the encounter


def test_apply_message_moves_one_unit():
    state = TracingState()
    state.inbox[3] = np.zeros(N_LEVELS, dtype=np.int64)
    state.inbox[3][5] = 2
    anomalies = apply_message(state.inbox, UpdateMessage(3, new_level=9,
                                                         old_level=5,
                                                         transport_day=4))
    assert anomalies == 0
    assert state.inbox[3][5] == 1 and state.inbox[3][9] == 1


def test_apply_message_absent_mass_is_anomalous():
    state = TracingState()
    anomalies = apply_message(state.inbox, UpdateMessage(2, new_level=7,
                                                         old_level=3,
                                                         transport_day=2))
    assert anomalies == 1
    assert state.inbox[2][7] == 1    # still lands at the new level


def test_cluster_window_counts_and_order():
    msgs = [EncounterMessage(encounter_day=10, level=4, transport_day=10),
            EncounterMessage(encounter_day=10, level=4, transport_day=10),
            EncounterMessage(encounter_day=9, level=2, transport_day=9)]
    by_day = cluster_window(msgs, now=10)
    as_tuples = {(c.day_offset, c.risk_level, c.count)
                 for day in by_day for c in by_day[day]}
    assert as_tuples == {(0, 4, 2), (1, 2, 1)}


def test_cluster_window_drops_stale_messages():
    msgs = [EncounterMessage(encounter_day=0, level=3, transport_day=0)]
    assert cluster_window(msgs, now=20) == {}


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 15)), max_size=40))
def test_cluster_window_conserves_messages(pairs):
    now = 14
    msgs = [EncounterMessage(encounter_day=now - off, level=lv, transport_day=now - off)
            for off, lv in pairs]
    by_day = cluster_window(msgs, now=now)
    total = sum(c.count for day in by_day for c in by_day[day])
    assert total == len(msgs)


# ---------------------------------------------------------------------------
# process_inbox: update emission rules

def _state_with_contacts(days_counts):
    state = TracingState()
    for day, count in days_counts.items():
        state.contact_log[day] = [(100 + i, 1) for i in range(count)]
    return state


def test_process_inbox_no_change_no_messages():
    state = _state_with_contacts({4: 3})
    y = np.full(15, 0.3)
    state.sent_level.update({d: quantize(0.3, UNIFORM) for d in range(5)})
    out = process_inbox(state, 5, quantize(y, UNIFORM), quantize(y, UNIFORM))
    assert out == []


def test_process_inbox_emits_one_update_per_contact_unit():
    now = 6
    state = _state_with_contacts({5: 3})
    prev = quantize(np.full(15, 0.10), UNIFORM)
    new = quantize(np.full(15, 0.95), UNIFORM)
    out = process_inbox(state, now, prev, new)
    on_day5 = [m for m in out if m.encounter_day == 5]
    assert len(on_day5) == 3
    assert all(m.new_level == 15 and m.old_level == 1 for m in on_day5)


def test_process_inbox_same_bin_change_is_silent():
    state = _state_with_contacts({3: 2})
    prev = quantize(np.full(15, 0.30), UNIFORM)
    new = quantize(np.full(15, 0.31), UNIFORM)   # same 1/16-wide bin
    assert process_inbox(state, 4, prev, new) == []


def test_process_inbox_wrong_length_rejected():
    state = TracingState()
    with pytest.raises(ValueError):
        process_inbox(state, 3, np.zeros(14, dtype=np.int64),
                      np.zeros(14, dtype=np.int64))


# ---------------------------------------------------------------------------
# mailbox routing

def test_mailbox_round_trip_graded():
    mailbox = Mailbox()
    states = {1: TracingState(), 2: TracingState()}
    mailbox.register_contact(states, 1, 2, day=3, count=2, level_a=4, level_b=9,
                             graded=True)
    # both sides log the contact and receive the peer's current level
    assert sum(n for _, n in states[1].contact_log[3]) == 2
    assert sum(n for _, n in states[2].contact_log[3]) == 2
    assert states[1].inbox[3][9] == 2    # 1 hears 2's level
    assert states[2].inbox[3][4] == 2    # 2 hears 1's level


def test_mailbox_updates_follow_handles():
    mailbox = Mailbox()
    states = {1: TracingState(), 2: TracingState()}
    mailbox.register_contact(states, 1, 2, day=0, count=1, level_a=0, level_b=0,
                             graded=True)
    updates = process_inbox(states[1], 1,
                            np.zeros(15, dtype=np.int64),
                            np.full(15, 12, dtype=np.int64))
    delivered = mailbox.deliver(states, updates)
    assert delivered >= 1
    assert states[2].inbox[0][12] == 1


def test_mailbox_binary_mode_logs_contacts_without_messages():
    mailbox = Mailbox()
    states = {1: TracingState(), 2: TracingState()}
    mailbox.register_contact(states, 1, 2, day=5, count=3, level_a=2, level_b=2,
                             graded=False)
    assert states[1].inbox == {} and states[2].inbox == {}
    assert sum(n for _, n in states[2].contact_log[5]) == 3
    assert set(mailbox.peers_of(states[1], since=0)) == {2}

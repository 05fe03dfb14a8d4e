"""Infectiousness predictors: f(Observables) -> 15-day infectiousness history.

Four baselines ship alongside the learned network:

* no-tracing   -- constant history mapping to behaviour level 1;
* binary (BCT) -- no histories at all; positive-test notices put 14-day
                  contacts at level 3 for 14 days (handled by the world loop
                  via :func:`bct_quarantine_span`);
* heuristic    -- deterministic rule cascade over tests, symptoms and
                  received message levels, driven by a config rule table;
* noisy oracle -- ground truth corrupted by multiplicative and additive
                  noise, used to bootstrap training data.

All predictors are pure functions of (Observables, rng); histories have
``DAY_WINDOW + 1 = 15`` entries, offset 0 = today.
"""
from __future__ import annotations

import numpy as np

from .config import DAY_WINDOW, N_LEVELS, HeuristicRules, RecommendConfig
from .tracing import Observables, TEST_NEGATIVE, TEST_POSITIVE

#: constant no-tracing history value; maps through default thresholds to level 1
NT_VALUE = 0.1

# symptom channels scored double by the heuristic (fever, cough)
SEVERE_SYMPTOMS = (0, 1)


def predict_nt(obs: Observables) -> np.ndarray:
    """No tracing: constant history, level 1 whatever the observables say."""
    return np.full(DAY_WINDOW + 1, NT_VALUE)


def bct_quarantine_span(result_day: int) -> tuple[int, int]:
    """Days [start, end] a positive result on ``result_day`` quarantines contacts."""
    return result_day + 1, result_day + DAY_WINDOW


def predict_heuristic(obs: Observables,
                      rules: HeuristicRules = HeuristicRules()) -> np.ndarray:
    """Rule cascade: symptoms + received levels, then test-result overrides.

    Entry k (day ``today - k``) accumulates the symptom score for that day and
    the decayed max received level from every offset >= k; a visible negative
    test multiplies its window by ``negative_test_factor``; a visible positive
    test pins its window at ``positive_test_value``.
    """
    h = np.zeros(DAY_WINDOW + 1)

    sym = obs.symptoms.astype(np.float64)
    per_day = sym.sum(axis=1) + sym[:, list(SEVERE_SYMPTOMS)].sum(axis=1) * (
        rules.severe_factor - 1.0)
    h += rules.symptom_score * per_day

    max_level = np.zeros(DAY_WINDOW + 1)
    for c in obs.clusters:
        max_level[c.day_offset] = max(max_level[c.day_offset], c.risk_level)
    for k in range(DAY_WINDOW + 1):
        src = np.arange(k, DAY_WINDOW + 1)
        h[k] += np.sum(max_level[src] / (N_LEVELS - 1)
                       * rules.message_weight * rules.message_decay ** (src - k))

    # offset of the most recent day a result became visible -> its result day
    neg = np.flatnonzero(obs.test_state == TEST_NEGATIVE)
    pos = np.flatnonzero(obs.test_state == TEST_POSITIVE)
    if neg.size and not pos.size:
        in_window = np.arange(DAY_WINDOW + 1) <= neg.max() + rules.test_window
        h[in_window] *= rules.negative_test_factor
    if pos.size:
        in_window = np.arange(DAY_WINDOW + 1) <= pos.max() + rules.test_window
        h[in_window] = np.maximum(h[in_window], rules.positive_test_value)
    return h


def predict_noisy_oracle(truth: np.ndarray, add_scale: float, mul_scale: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Ground truth with per-entry noise: max(0, y*(1+u_m) + u_a)."""
    if add_scale < 0 or mul_scale < 0:
        raise ValueError("noise scales must be >= 0")
    y = np.asarray(truth, dtype=np.float64)
    u_m = rng.uniform(-mul_scale, mul_scale, size=y.shape)
    u_a = rng.uniform(-add_scale, add_scale, size=y.shape)
    return np.maximum(0.0, y * (1.0 + u_m) + u_a)


def recommend(y_today: float, rec: RecommendConfig = RecommendConfig()) -> int:
    """Behaviour level = number of thresholds <= today's predicted value."""
    if np.isnan(y_today):
        raise ValueError("recommend: NaN prediction")
    return int(np.searchsorted(np.asarray(rec.thresholds), y_today, side="right"))


def recommend_many(y_today: np.ndarray, rec: RecommendConfig = RecommendConfig()) -> np.ndarray:
    if np.isnan(y_today).any():
        raise ValueError("recommend: NaN prediction")
    return np.searchsorted(np.asarray(rec.thresholds), y_today, side="right").astype(np.int8)

"""Baseline predictors: no-tracing, heuristic rules, noisy oracle, recommend."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pct.config import DAY_WINDOW, N_SYMPTOMS, HeuristicRules, RecommendConfig
from pct.predictors import (
    NT_VALUE,
    bct_quarantine_span,
    predict_heuristic,
    predict_noisy_oracle,
    predict_nt,
    recommend,
    recommend_many,
)
from pct.rng import make_rng
from pct.tracing import (
    PROFILE_DIM,
    TEST_NEGATIVE,
    TEST_NONE,
    TEST_POSITIVE,
    Cluster,
    Observables,
)

W = DAY_WINDOW + 1


def make_obs(symptoms=None, test_state=None, clusters=(), today=20):
    return Observables(
        profile_vec=np.zeros(PROFILE_DIM, dtype=np.float32),
        symptoms=np.zeros((W, N_SYMPTOMS), np.uint8) if symptoms is None else symptoms,
        test_state=np.full(W, TEST_NONE, np.uint8) if test_state is None else test_state,
        clusters=tuple(clusters),
        today=today,
    )


# --------------------------------------------------------------------------
# no tracing

def test_nt_constant_level_one():
    h = predict_nt(make_obs())
    assert h.shape == (W,)
    assert (h == NT_VALUE).all()
    assert recommend(h[0]) == 1


def test_bct_quarantine_span():
    assert bct_quarantine_span(10) == (11, 24)
    start, end = bct_quarantine_span(0)
    assert end - start + 1 == DAY_WINDOW


# --------------------------------------------------------------------------
# heuristic rule cascade (worked example frozen by hand)

def test_heuristic_empty_observables_is_zero():
    h = predict_heuristic(make_obs())
    np.testing.assert_array_equal(h, np.zeros(W))
    assert recommend(h[0]) == 0


def test_heuristic_worked_example():
    # three non-severe symptoms today + one cluster (offset 2, level 10):
    #   symptoms: 3 * 0.05                          = 0.15
    #   message : 10/15 * 0.4 * 0.8**2              = 0.17066...
    sym = np.zeros((W, N_SYMPTOMS), np.uint8)
    sym[0, [2, 3, 4]] = 1
    obs = make_obs(symptoms=sym, clusters=[Cluster(2, 10, 4)])
    h = predict_heuristic(obs)
    assert h[0] == pytest.approx(0.15 + (10 / 15) * 0.4 * 0.8**2)
    assert h[2] == pytest.approx((10 / 15) * 0.4)     # undecayed at the source day
    assert h[3] == pytest.approx(0.0)                 # older than any signal
    assert recommend(h[0]) == 2


def test_heuristic_severe_symptoms_score_double():
    sym = np.zeros((W, N_SYMPTOMS), np.uint8)
    sym[0, [0, 2, 3]] = 1  # channel 0 = fever, scored with severe_factor 2
    h = predict_heuristic(make_obs(symptoms=sym))
    assert h[0] == pytest.approx(0.05 * 4)


def test_heuristic_positive_test_pins_window():
    ts = np.full(W, TEST_NONE, np.uint8)
    ts[3] = TEST_POSITIVE
    h = predict_heuristic(make_obs(test_state=ts))
    np.testing.assert_allclose(h, np.ones(W))
    assert recommend(h[0]) == 3


def test_heuristic_negative_test_halves_window():
    sym = np.zeros((W, N_SYMPTOMS), np.uint8)
    sym[0, [2, 3, 4]] = 1
    ts = np.full(W, TEST_NONE, np.uint8)
    ts[1] = TEST_NEGATIVE
    h = predict_heuristic(make_obs(symptoms=sym, test_state=ts))
    assert h[0] == pytest.approx(0.5 * 0.15)


def test_heuristic_positive_beats_negative():
    ts = np.full(W, TEST_NONE, np.uint8)
    ts[1] = TEST_NEGATIVE
    ts[5] = TEST_POSITIVE
    h = predict_heuristic(make_obs(test_state=ts))
    assert (h >= 1.0).all()


def test_heuristic_message_decay_toward_present():
    # a single old cluster contributes geometrically less to more recent days
    obs = make_obs(clusters=[Cluster(6, 15, 1)])
    h = predict_heuristic(obs)
    assert h[6] > h[4] > h[2] > h[0] > 0
    assert h[7] == pytest.approx(0.0)
    ratios = h[:6] / h[1:7]
    np.testing.assert_allclose(ratios, HeuristicRules().message_decay)


def test_heuristic_is_deterministic():
    sym = (make_rng(0, 0).random((W, N_SYMPTOMS)) < 0.2).astype(np.uint8)
    obs = make_obs(symptoms=sym, clusters=[Cluster(1, 3, 2), Cluster(9, 12, 1)])
    np.testing.assert_array_equal(predict_heuristic(obs), predict_heuristic(obs))


# --------------------------------------------------------------------------
# noisy oracle

def test_noisy_oracle_interval():
    truth = np.full(W, 0.5)
    rng = make_rng(11, 0)
    for _ in range(200):
        out = predict_noisy_oracle(truth, add_scale=0.1, mul_scale=0.4, rng=rng)
        assert out.shape == (W,)
        assert (out >= 0.5 * 0.6 - 0.1 - 1e-12).all()
        assert (out <= 0.5 * 1.4 + 0.1 + 1e-12).all()


def test_noisy_oracle_zero_noise_is_identity():
    truth = make_rng(12, 0).random(W)
    out = predict_noisy_oracle(truth, 0.0, 0.0, make_rng(12, 1))
    np.testing.assert_array_equal(out, truth)


def test_noisy_oracle_clips_at_zero():
    truth = np.zeros(W)
    rng = make_rng(13, 0)
    draws = np.concatenate(
        [predict_noisy_oracle(truth, 0.1, 0.5, rng) for _ in range(100)])
    assert (draws >= 0).all()
    assert (draws == 0).sum() > 0.3 * draws.size  # negative additive draws clip


def test_noisy_oracle_rejects_negative_scales():
    with pytest.raises(ValueError):
        predict_noisy_oracle(np.zeros(W), -0.1, 0.5, make_rng(0, 0))
    with pytest.raises(ValueError):
        predict_noisy_oracle(np.zeros(W), 0.1, -0.5, make_rng(0, 0))


# --------------------------------------------------------------------------
# recommendation thresholds

@pytest.mark.parametrize(
    "y,level",
    [(0.0, 0), (0.0499, 0), (0.05, 1), (0.19, 1), (0.2, 2), (0.49, 2),
     (0.5, 3), (2.0, 3)],
)
def test_recommend_closed_form(y, level):
    assert recommend(y) == level


def test_recommend_rejects_nan():
    with pytest.raises(ValueError):
        recommend(float("nan"))
    with pytest.raises(ValueError):
        recommend_many(np.array([0.1, float("nan")]))


def test_recommend_many_matches_scalar():
    ys = make_rng(14, 0).random(200)
    many = recommend_many(ys)
    assert many.tolist() == [recommend(float(y)) for y in ys]


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(min_value=0, max_value=1, allow_nan=False),
    b=st.floats(min_value=0, max_value=1, allow_nan=False),
)
def test_recommend_monotone(a, b):
    lo, hi = sorted((a, b))
    assert recommend(lo) <= recommend(hi)


def test_recommend_custom_thresholds():
    rec = RecommendConfig(thresholds=(0.1, 0.4, 0.9))
    assert recommend(0.05, rec) == 0
    assert recommend(0.4, rec) == 2

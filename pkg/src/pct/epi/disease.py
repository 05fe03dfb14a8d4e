"""Disease progression: SEIR compartments driven by per-agent infectiousness curves.

* Curves are triangular: zero through a latent period, linear rise to a
  per-agent peak at ``incubation`` days since exposure, linear decay back to
  zero over a recovery tail.
* Compartments are a pure function of days-since-exposure, so progression is
  monotone S->E->I->R by construction.
* Symptoms switch on at the incubation day for non-asymptomatic agents and
  persist until recovery; reporting noise (dropout/drop-in) lives in the
  world loop, not here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DiseaseConfig, N_SYMPTOMS

# compartment codes
SUSCEPTIBLE, EXPOSED, INFECTIOUS, RECOVERED = 0, 1, 2, 3
COMPARTMENT_NAMES = ("S", "E", "I", "R")

# observed test states, indexed by the tracing TEST_* codes
TEST_STATE_NAMES = ("none", "pending", "positive", "negative")

# per-symptom presence probability at onset; channels 0/1 are fever/cough
SYMPTOM_PROBS = np.array(
    [0.7, 0.6, 0.35, 0.3, 0.3, 0.25, 0.25, 0.2, 0.2, 0.15, 0.15, 0.1])


@dataclass(frozen=True)
class HealthStatus:
    """One day of app-visible health data (pending results carry no sign)."""

    day: int
    reported_symptoms: tuple[bool, ...]
    test_result: str               # one of TEST_STATE_NAMES
    test_result_day: int | None


@dataclass
class DiseaseCourses:
    """Per-agent disease parameters, sampled once at world construction.

    All arrays have length n_agents; agents that are never exposed simply
    never read theirs.
    """

    latent: np.ndarray       # int, zero-infectiousness days after exposure
    incubation: np.ndarray   # int, days from exposure to curve peak / symptom onset
    peak: np.ndarray         # float, curve maximum in [0, 1]
    tail: np.ndarray         # int, days from peak back to zero
    asymptomatic: np.ndarray  # bool
    active_symptoms: np.ndarray  # (n, N_SYMPTOMS) bool, channels shown when symptomatic


def sample_courses(n: int, cfg: DiseaseConfig, rng: np.random.Generator) -> DiseaseCourses:
    latent = rng.integers(cfg.latent_min, cfg.latent_max + 1, size=n)
    incubation = np.rint(rng.gamma(cfg.incubation_shape, cfg.incubation_scale, size=n))
    incubation = np.maximum(incubation, latent + 1).astype(np.int64)
    peak = rng.uniform(cfg.peak_min, cfg.peak_max, size=n)
    tail = rng.integers(cfg.tail_min, cfg.tail_max + 1, size=n)
    asympt = rng.random(n) < cfg.asymptomatic_frac
    symptoms = rng.random((n, N_SYMPTOMS)) < SYMPTOM_PROBS
    bare = ~symptoms.any(axis=1)
    symptoms[bare, 0] = True   # symptomatic course always shows at least fever
    return DiseaseCourses(latent, incubation, peak.astype(np.float64), tail,
                          asympt, symptoms)


def curve_value(dse: np.ndarray, courses: DiseaseCourses,
                idx: np.ndarray | slice = slice(None)) -> np.ndarray:
    """Infectiousness at days-since-exposure ``dse`` for agents ``idx``.

    Vectorized; negative ``dse`` (not yet exposed) yields 0.

    Args:
        dse: integer array of days since exposure (broadcastable with idx).
        courses: sampled disease parameters.
        idx: agent indices selecting rows of ``courses``.

    Returns:
        float array of curve values in [0, 1].
    """
    latent = courses.latent[idx]
    inc = courses.incubation[idx]
    peak = courses.peak[idx]
    tail = courses.tail[idx]
    dse = np.asarray(dse, dtype=np.float64)
    rise = peak * (dse - latent) / (inc - latent)
    fall = peak * (1.0 - (dse - inc) / tail)
    y = np.where(dse <= inc, rise, fall)
    y[(dse <= latent) | (dse >= inc + tail)] = 0.0
    return np.clip(y, 0.0, 1.0)


def compartments(day: int, day_exposed: np.ndarray, courses: DiseaseCourses) -> np.ndarray:
    """Compartment codes for every agent on ``day`` (day_exposed < 0 = never)."""
    dse = day - day_exposed
    comp = np.full(day_exposed.shape, SUSCEPTIBLE, dtype=np.int8)
    exposed = day_exposed >= 0
    comp[exposed & (dse <= courses.latent)] = EXPOSED
    recov_at = courses.incubation + courses.tail
    comp[exposed & (dse > courses.latent) & (dse < recov_at)] = INFECTIOUS
    comp[exposed & (dse >= recov_at)] = RECOVERED
    return comp


def truth_history(agent: int, day: int, day_exposed: np.ndarray,
                  courses: DiseaseCourses, window: int) -> np.ndarray:
    """Ground-truth infectiousness for days ``day .. day - window`` (length window+1)."""
    if day_exposed[agent] < 0:
        return np.zeros(window + 1)
    offsets = day - np.arange(window + 1) - day_exposed[agent]
    return curve_value(offsets, courses, np.full(window + 1, agent))

"""The world: one simulation run of agents, contacts, tracing and testing.

Daily step order (all randomness from purpose-split streams, so runs are
byte-reproducible from (config, seed)):

1. morning compartments; deliver due test results (quarantine notices for
   self / household / binary-tracing contacts take effect next day);
2. record today's reported symptoms and observed test states;
3. app layer: build Observables from yesterday's inbox state, run the
   predictor, derive recommendations, emit/deliver update messages (visible
   to receivers tomorrow);
4. resolve behaviour levels (quarantine overrides, dropouts, forced level);
5. generate contacts, register app-user pairs in the mailbox;
6. resolve transmissions against the morning compartments;
7. testing decisions for truly symptomatic agents;
8. metrics row + event-log records.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..config import (DAY_WINDOW, LEVEL_MULTIPLIERS, N_SYMPTOMS, ScenarioParams,
                      SimConfig, config_hash)
from ..predictors import (bct_quarantine_span, predict_heuristic,
                          predict_noisy_oracle, recommend_many)
from ..rng import DOM_RUN, seed_seq
from ..tracing import (Mailbox, Observables, RiskBinTable, TracingState,
                       TEST_NEGATIVE, TEST_PENDING, TEST_POSITIVE,
                       process_inbox, quantize)
from . import disease
from .contacts import assign_households, daily_contacts

log = logging.getLogger("pct.world")

# population constants (not scenario knobs)
SMARTPHONE_OWNERSHIP = 0.712   # consistent with the adoption/uptake table
SEX_PROBS = (0.49, 0.49, 0.02)
CONDITION_PROBS = (0.10, 0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.02)
N_CONDITIONS = len(CONDITION_PROBS)


def transmission_prob(infectiousness: float, carefulness: float,
                      params: ScenarioParams) -> float:
    """p = clamp(beta * infectiousness * (1 - kappa * carefulness), 0, 1)."""
    p = params.beta * infectiousness * (1.0 - params.kappa * carefulness)
    return float(np.clip(p, 0.0, 1.0))


def draw_transmission(infectiousness: float, carefulness: float,
                      params: ScenarioParams, rng: np.random.Generator) -> bool:
    """One encounter-unit transmission draw between an I and an S agent."""
    return bool(rng.random() < transmission_prob(infectiousness, carefulness, params))


def apply_behavior_level(level: int) -> float:
    """Out-of-household contact multiplier for a behaviour level (0..3)."""
    if level not in (0, 1, 2, 3):
        raise ValueError(f"behaviour level must be 0..3, got {level}")
    return LEVEL_MULTIPLIERS[level]


class Driver:
    """Adapter between the world loop and a predictor.

    ``graded`` drivers emit quantized risk messages; ``predict`` returns one
    15-entry infectiousness history per requested app user.
    """

    name = "base"
    graded = True

    def predict(self, world: "World", day: int, ids: np.ndarray,
                obs_list: list[Observables]) -> np.ndarray:
        raise NotImplementedError


class HeuristicDriver(Driver):
    name = "heuristic"

    def predict(self, world, day, ids, obs_list):
        return np.stack([predict_heuristic(o, world.cfg.heuristic) for o in obs_list])


class OracleDriver(Driver):
    """Ground truth + noise; the only driver allowed to see simulator state."""

    name = "oracle"

    def predict(self, world, day, ids, obs_list):
        sc = world.cfg.scenario
        out = np.empty((len(ids), DAY_WINDOW + 1))
        for row, agent in enumerate(ids):
            truth = world.truth_history(int(agent), day)
            out[row] = predict_noisy_oracle(truth, sc.oracle_add_noise,
                                            sc.oracle_mul_noise, world.rng_oracle)
        return out


def make_driver(cfg: SimConfig) -> Driver | None:
    if cfg.method in ("nt", "bct"):
        return None
    if cfg.method == "heuristic":
        return HeuristicDriver()
    if cfg.method == "oracle":
        return OracleDriver()
    # import lazily so simulations without the network never load torch
    from ..setnet.infer import ModelDriver
    return ModelDriver.load(cfg.checkpoint)


@dataclass
class Sample:
    """One supervised example: device view + simulator-truth target."""

    agent: int
    day: int
    obs: Observables
    target: np.ndarray          # (15,) ground-truth infectiousness history
    target_source: str = "simulator_truth"


@dataclass
class RunResult:
    """Everything a finished run exposes to metrics/pipeline code."""

    method: str
    n_agents: int
    n_days: int
    seed: int
    scenario: dict[str, Any]
    series: dict[str, np.ndarray]           # per-day metric arrays
    level_counts: np.ndarray                # (T, 4)
    tree_edges: list[tuple[int, int, int, bool]]  # (infector, infectee, day, household)
    roots: list[int]
    final_compartments: np.ndarray          # (N,) codes at horizon
    day_exposed: np.ndarray
    event_log: list[dict[str, Any]]
    samples: list[Sample] = field(default_factory=list)
    anomalies: int = 0

    @property
    def mean_contacts(self) -> float:
        """Mean daily qualifying encounters per agent over the run."""
        return float(self.series["contacts"].mean())


class World:
    """Mutable state of one run; see module docstring for the step order."""

    def __init__(self, cfg: SimConfig, driver: Driver | None = None,
                 collect_samples: bool = False, sample_keep: float = 1.0,
                 collect_risk: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.scenario = cfg.scenario
        self.seed = cfg.scenario.seed or cfg.seed
        self.collect_samples = collect_samples
        self.sample_keep = sample_keep
        self.collect_risk = collect_risk
        self.risk_values: list[np.ndarray] = []

        streams = seed_seq(self.seed, DOM_RUN).spawn(8)
        (self.rng_init, self.rng_contacts, self.rng_trans, self.rng_test,
         self.rng_report, self.rng_quar, self.rng_oracle, self.rng_sample) = (
            np.random.default_rng(s) for s in streams)

        n = cfg.n_agents
        sc = cfg.scenario
        rng = self.rng_init

        # ---- profiles
        self.age = rng.integers(0, 101, size=n)
        self.sex = rng.choice(3, size=n, p=SEX_PROBS)
        self.conditions = rng.random((n, N_CONDITIONS)) < np.asarray(CONDITION_PROBS)
        lo, hi = sc.carefulness_range
        self.carefulness = rng.uniform(lo, hi, size=n)
        self.smartphone = rng.random(n) < SMARTPHONE_OWNERSHIP
        adoption = 0.0 if cfg.method == "nt" else sc.adoption_rate
        owners = np.flatnonzero(self.smartphone)
        want = int(round(adoption * n))
        if want > owners.size:
            log.warning("adoption %.2f exceeds smartphone ownership; capping", adoption)
            want = owners.size
        self.app_ids = np.sort(rng.choice(owners, size=want, replace=False))
        self.has_app = np.zeros(n, dtype=bool)
        self.has_app[self.app_ids] = True
        self.dropout_flag = rng.random(n) < sc.all_levels_dropout

        self.profile_vec = np.concatenate([
            (self.age / 100.0)[:, None],
            np.eye(3)[self.sex],
            self.conditions.astype(np.float64),
            self.carefulness[:, None],
        ], axis=1).astype(np.float32)

        # ---- structure + disease
        self.hh = assign_households(n, cfg.contacts, rng)
        self.courses = disease.sample_courses(n, cfg.disease, rng)
        self.day_exposed = np.full(n, -1, dtype=np.int64)
        n_seeds = max(1, int(round(sc.init_exposed_frac * n)))
        seed_ids = np.sort(rng.choice(n, size=n_seeds, replace=False))
        self.day_exposed[seed_ids] = 0
        self.roots = [int(a) for a in seed_ids]

        # ---- testing state
        self.result_day = np.full(n, -1, dtype=np.int64)     # pending result arrival
        self.pending_outcome = np.zeros(n, dtype=np.int8)    # TEST_* code when due
        self.last_result = np.zeros(n, dtype=np.int8)        # last visible TEST_* code
        self.last_result_day = np.full(n, -1, dtype=np.int64)
        self.last_negative_day = np.full(n, -10_000, dtype=np.int64)
        self.ever_positive = np.zeros(n, dtype=bool)

        # ---- quarantine spans (union of self/household/binary-notice events)
        self.q_from = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        self.q_until = np.full(n, -1, dtype=np.int64)

        # ---- per-day histories
        T = cfg.n_days
        self.rep_symptoms = np.zeros((n, T, N_SYMPTOMS), dtype=np.uint8)
        self.obs_test_state = np.zeros((n, T), dtype=np.uint8)
        self.actual_levels = np.ones((n, T), dtype=np.int8)

        # ---- tracing
        self.bins = RiskBinTable.load(cfg.bins) if cfg.bins else RiskBinTable.uniform()
        self.mailbox = Mailbox()
        self.tstates = {int(a): TracingState() for a in self.app_ids}
        self.prev_levels: dict[int, np.ndarray | None] = {int(a): None for a in self.app_ids}
        self.driver = driver if driver is not None else make_driver(cfg)

        # ---- bookkeeping
        self.day = 0
        self.tree_edges: list[tuple[int, int, int, bool]] = []
        self.samples: list[Sample] = []
        self._series = {k: np.zeros(T) for k in
                        ("S", "E", "I", "R", "new_cases", "cum_cases", "contacts",
                         "false_quarantine", "tests")}
        self.level_counts = np.zeros((T, 4), dtype=np.int64)
        self.event_log: list[dict[str, Any]] = [{
            "day": -1, "event": "init", "agents": n, "days": T,
            "method": cfg.method, "seed": int(self.seed),
            "seeds": self.roots, "households": len(self.hh.members),
            "app_users": int(want), "config": config_hash(cfg),
        }]

    # ------------------------------------------------------------------ API

    def ground_truth(self, agent: int, day: int) -> float:
        """Ground-truth infectiousness of ``agent`` on ``day`` (must be <= today)."""
        if day > self.day:
            raise ValueError(f"ground truth queried for future day {day} (today {self.day})")
        if self.day_exposed[agent] < 0:
            return 0.0
        dse = np.asarray([day - self.day_exposed[agent]])
        return float(disease.curve_value(dse, self.courses, np.asarray([agent]))[0])

    def truth_history(self, agent: int, day: int) -> np.ndarray:
        return disease.truth_history(agent, day, self.day_exposed, self.courses, DAY_WINDOW)

    def run(self) -> RunResult:
        for _ in range(self.cfg.n_days):
            self.step_day()
        return self.result()

    def result(self) -> RunResult:
        comp = disease.compartments(self.cfg.n_days - 1, self.day_exposed, self.courses)
        anomalies = sum(st.anomalies for st in self.tstates.values())
        from ..config import to_dict
        return RunResult(
            method=self.cfg.method, n_agents=self.cfg.n_agents, n_days=self.cfg.n_days,
            seed=int(self.seed), scenario=to_dict(self.scenario),
            series=self._series, level_counts=self.level_counts,
            tree_edges=self.tree_edges, roots=self.roots,
            final_compartments=comp, day_exposed=self.day_exposed.copy(),
            event_log=self.event_log, samples=self.samples, anomalies=anomalies,
        )

    # ------------------------------------------------------------- one day

    def step_day(self) -> None:
        d = self.day
        if d >= self.cfg.n_days:
            raise RuntimeError("stepping past configured horizon")
        comp = disease.compartments(d, self.day_exposed, self.courses)

        self._deliver_results(d)
        self._record_observed_status(d, comp)
        rec_app = self._app_layer(d)
        rec_eff, actual = self._resolve_levels(d, rec_app)
        a, b, count, hh_flag = self._contacts(d, actual)
        new_cases = self._transmissions(d, comp, a, b, count, hh_flag)
        tests = self._testing(d, comp)

        # end-of-day accounting (exposures today show up as E)
        eod = disease.compartments(d, self.day_exposed, self.courses)
        s = self._series
        for code, name in enumerate(disease.COMPARTMENT_NAMES):
            s[name][d] = int((eod == code).sum())
        s["new_cases"][d] = new_cases
        s["cum_cases"][d] = int((self.day_exposed >= 0).sum())
        s["contacts"][d] = 2.0 * count.sum() / self.cfg.n_agents
        healthy = (comp == disease.SUSCEPTIBLE) | (comp == disease.RECOVERED)
        s["false_quarantine"][d] = float(((rec_eff == 3) & healthy).mean())
        s["tests"][d] = tests
        self.actual_levels[:, d] = actual
        self.level_counts[d] = np.bincount(actual, minlength=4)[:4]
        self.event_log.append({
            "day": d, "event": "summary",
            "S": int(s["S"][d]), "E": int(s["E"][d]),
            "I": int(s["I"][d]), "R": int(s["R"][d]),
            "new_cases": int(new_cases), "contacts": float(s["contacts"][d]),
            "levels": [int(c) for c in self.level_counts[d]],
            "false_quarantine": float(s["false_quarantine"][d]),
            "tests": int(tests),
        })
        self.day += 1

    # ----------------------------------------------------------- sub-steps

    def _set_quarantine(self, agent: int, day: int) -> None:
        start, end = day + 1, day + DAY_WINDOW
        if self.q_until[agent] < start:
            self.q_from[agent] = start
        self.q_until[agent] = max(self.q_until[agent], end)

    def _deliver_results(self, d: int) -> None:
        sc = self.scenario
        for agent in np.flatnonzero(self.result_day == d):
            agent = int(agent)
            code = int(self.pending_outcome[agent])
            self.result_day[agent] = -1
            self.pending_outcome[agent] = 0
            self.last_result[agent] = code
            self.last_result_day[agent] = d
            positive = code == TEST_POSITIVE
            self.event_log.append({"day": d, "event": "test_result", "agent": agent,
                                   "result": "positive" if positive else "negative"})
            if not positive:
                self.last_negative_day[agent] = d
                continue
            self.ever_positive[agent] = True
            if self.rng_quar.random() >= sc.quarantine_dropout_test:
                self._set_quarantine(agent, d)
            for m in self.hh.members[self.hh.household_id[agent]]:
                if m == agent:
                    continue
                if self.rng_quar.random() >= sc.quarantine_dropout_household:
                    self._set_quarantine(int(m), d)
            if self.cfg.method == "bct" and self.has_app[agent]:
                start, _ = bct_quarantine_span(d)
                for peer in self.mailbox.peers_of(self.tstates[agent], since=d - DAY_WINDOW):
                    self._set_quarantine(peer, d)
                self.event_log.append({"day": d, "event": "bct_notice", "agent": agent,
                                       "first_active": start})

    def _record_observed_status(self, d: int, comp: np.ndarray) -> None:
        sc, n = self.scenario, self.cfg.n_agents
        onset = self.day_exposed + self.courses.incubation
        recov = onset + self.courses.tail
        sympt = ((self.day_exposed >= 0) & ~self.courses.asymptomatic
                 & (onset <= d) & (d < recov))
        reported = sympt & (self.rng_report.random(n) >= sc.symptom_dropout)
        self.rep_symptoms[reported, d, :] = self.courses.active_symptoms[reported]
        dropin = ~sympt & (self.rng_report.random(n) < sc.symptom_dropin)
        for agent in np.flatnonzero(dropin):
            k = int(self.rng_report.integers(1, 3))
            chans = self.rng_report.choice(N_SYMPTOMS, size=k, replace=False)
            self.rep_symptoms[agent, d, chans] = 1

        state = np.zeros(n, dtype=np.uint8)
        visible = (self.last_result_day >= 0) & (self.last_result_day <= d)
        state[visible] = self.last_result[visible]
        state[self.result_day > d] = TEST_PENDING
        self.obs_test_state[:, d] = state

    def _window_days(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """(day indices, validity mask) for offsets 0..DAY_WINDOW at day d."""
        days = d - np.arange(DAY_WINDOW + 1)
        valid = days >= 0
        return np.where(valid, days, 0), valid

    def build_observables(self, d: int, ids: Sequence[int]) -> list[Observables]:
        days, valid = self._window_days(d)
        ids_arr = np.asarray(ids)
        sym = self.rep_symptoms[ids_arr[:, None], days[None, :], :].copy()
        tst = self.obs_test_state[ids_arr[:, None], days[None, :]].copy()
        sym[:, ~valid, :] = 0
        tst[:, ~valid] = 0
        out = []
        for row, agent in enumerate(ids_arr):
            clusters = tuple(c for lst in self.tstates[int(agent)].clusters(d).values()
                             for c in lst)
            out.append(Observables(self.profile_vec[agent], sym[row], tst[row],
                                   clusters, d))
        return out

    def _app_layer(self, d: int) -> np.ndarray | None:
        """Run predictor + messaging; returns recommended levels per app user."""
        if self.driver is None and self.cfg.method != "bct":
            return None
        if self.app_ids.size == 0:
            return None
        for st in self.tstates.values():
            st.prune(d)
        if self.cfg.method == "bct":
            return None  # binary recommendations come from quarantine spans

        obs_list = self.build_observables(d, self.app_ids)
        yhat = self.driver.predict(self, d, self.app_ids, obs_list)
        if self.collect_risk:
            self.risk_values.append(np.asarray(yhat, dtype=np.float64).ravel().copy())
        levels_new = quantize(yhat, self.bins)
        rec = recommend_many(yhat[:, 0], self.cfg.recommend)

        updates = []
        self._today_level = np.zeros(self.cfg.n_agents, dtype=np.int64)
        for row, agent in enumerate(self.app_ids):
            agent = int(agent)
            st = self.tstates[agent]
            prev = self.prev_levels[agent]
            prev = levels_new[row] if prev is None else prev
            updates.extend(process_inbox(st, d, prev, levels_new[row]))
            self.prev_levels[agent] = levels_new[row]
            self._today_level[agent] = int(levels_new[row, 0])
        self.mailbox.deliver(self.tstates, updates)

        if self.collect_samples:
            keep = self.rng_sample.random(len(obs_list)) < self.sample_keep
            for row, agent in enumerate(self.app_ids):
                if keep[row]:
                    target = self.truth_history(int(agent), d).astype(np.float32)
                    self.samples.append(Sample(int(agent), d, obs_list[row], target))
        return rec

    def _resolve_levels(self, d: int, rec_app: np.ndarray | None
                        ) -> tuple[np.ndarray, np.ndarray]:
        n = self.cfg.n_agents
        rec_eff = np.ones(n, dtype=np.int8)
        if rec_app is not None:
            rec_eff[self.app_ids] = rec_app
        in_quarantine = (self.q_from <= d) & (d <= self.q_until)
        rec_eff = np.maximum(rec_eff, np.where(in_quarantine, 3, 0)).astype(np.int8)
        actual = rec_eff.copy()
        actual[self.dropout_flag] = 1
        if self.cfg.force_level >= 0:
            actual[:] = self.cfg.force_level
        return rec_eff, actual

    def _contacts(self, d: int, actual: np.ndarray):
        mult = np.asarray(LEVEL_MULTIPLIERS)[actual]
        a, b, count, hh_flag = daily_contacts(
            self.hh, self.scenario.mobility_factor, mult, self.cfg.contacts,
            self.rng_contacts)
        if self.app_ids.size:
            graded = self.cfg.method != "bct"
            today = getattr(self, "_today_level", None)
            both = self.has_app[a] & self.has_app[b]
            for ai, bi, ci in zip(a[both], b[both], count[both]):
                ai, bi, ci = int(ai), int(bi), int(ci)
                la = int(today[ai]) if graded and today is not None else 0
                lb = int(today[bi]) if graded and today is not None else 0
                self.mailbox.register_contact(self.tstates, ai, bi, d, ci,
                                              la, lb, graded)
        return a, b, count, hh_flag

    def _transmissions(self, d: int, comp: np.ndarray, a, b, count, hh_flag) -> int:
        inf_a = (comp[a] == disease.INFECTIOUS) & (comp[b] == disease.SUSCEPTIBLE)
        inf_b = (comp[b] == disease.INFECTIOUS) & (comp[a] == disease.SUSCEPTIBLE)
        new = 0
        for src, dst, mask in ((a, b, inf_a), (b, a, inf_b)):
            for i in np.flatnonzero(mask):
                infector, infectee = int(src[i]), int(dst[i])
                if self.day_exposed[infectee] >= 0:
                    continue  # already exposed earlier today
                p = self._transmission_prob(infector, infectee, d)
                p_any = 1.0 - (1.0 - p) ** int(count[i])
                if self.rng_trans.random() < p_any:
                    self.day_exposed[infectee] = d
                    self.tree_edges.append((infector, infectee, d, bool(hh_flag[i])))
                    self.event_log.append({
                        "day": d, "event": "exposure", "infector": infector,
                        "infectee": infectee, "household": bool(hh_flag[i])})
                    new += 1
        return new

    def _transmission_prob(self, infector: int, infectee: int, d: int) -> float:
        dse = np.asarray([d - self.day_exposed[infector]])
        curve = float(disease.curve_value(dse, self.courses, np.asarray([infector]))[0])
        return transmission_prob(curve, float(self.carefulness[infectee]), self.scenario)

    def _testing(self, d: int, comp: np.ndarray) -> int:
        cfg, n = self.cfg.testing, self.cfg.n_agents
        onset = self.day_exposed + self.courses.incubation
        recov = onset + self.courses.tail
        sympt = ((self.day_exposed >= 0) & ~self.courses.asymptomatic
                 & (onset <= d) & (d < recov))
        eligible = (sympt & (self.result_day < 0) & ~self.ever_positive
                    & (d - self.last_negative_day >= cfg.cooldown_days))
        draws = self.rng_test.random(n)
        seek = eligible & (draws < cfg.daily_seek_scale * self.carefulness)
        for agent in np.flatnonzero(seek):
            agent = int(agent)
            self.result_day[agent] = d + cfg.delay_days
            false_neg = self.rng_test.random() < cfg.false_negative
            self.pending_outcome[agent] = TEST_NEGATIVE if false_neg else TEST_POSITIVE
        return int(seek.sum())

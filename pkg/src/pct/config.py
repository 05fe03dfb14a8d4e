"""Configuration dataclasses and strict JSON loading.

Every experiment is described by a single JSON document that maps onto the
nested dataclasses below.  Loading is strict: unknown keys anywhere in the
document raise :class:`ConfigError` (exit code 2 from the CLI), so typos never
silently fall back to defaults.

The full resolved config has a stable canonical hash (:func:`config_hash`)
that is recorded in run manifests and dataset manifests.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

# Tracing methods understood by the simulator.  "nt" (no tracing) disables the
# app layer entirely (adoption is forced to zero); "bct" exchanges binary
# positive-test notices; the remaining methods send graded risk messages driven
# by the named predictor ("ds-pct" = trained Deep-Set network).
METHODS = ("nt", "bct", "heuristic", "oracle", "ds-pct")

#: number of distinct risk levels carried by a message (4-bit code)
N_LEVELS = 16
#: history window: estimates cover today .. today - DAY_WINDOW
DAY_WINDOW = 14
#: number of symptom channels an agent can report
N_SYMPTOMS = 12
#: behaviour multipliers on out-of-household mixing, indexed by level 0..3
LEVEL_MULTIPLIERS = (1.3, 1.0, 0.5, 0.0)


class ConfigError(RuntimeError):
    """Raised when a config document fails validation."""


@dataclass
class ScenarioParams:
    """One point of the scenario space (the knobs the pipeline randomizes).

    Defaults are the midpoints of the randomization ranges; ``beta``/``kappa``
    are fixed transmission constants and ``seed`` identifies the run.
    """

    adoption_rate: float = 0.45        # fraction of agents running the app
    carefulness_range: tuple[float, float] = (0.5, 0.8)  # per-agent carefulness ~ U(lo, hi)
    init_exposed_frac: float = 0.004   # initially exposed fraction (seed cases)
    oracle_add_noise: float = 0.10     # oracle driver: additive noise half-width
    oracle_mul_noise: float = 0.5      # oracle driver: relative noise half-width
    mobility_factor: float = 0.6       # scales out-of-household contact rate
    symptom_dropout: float = 0.35      # P(an agent-day of symptoms goes unreported)
    symptom_dropin: float = 0.0005     # P(healthy agent-day reports phantom symptoms)
    quarantine_dropout_test: float = 0.02       # P(ignore own positive-test quarantine)
    quarantine_dropout_household: float = 0.035  # P(ignore household-member quarantine)
    all_levels_dropout: float = 0.03   # fraction of agents ignoring every recommendation
    seed: int = 0                      # per-run seed (0 = inherit the top-level seed)
    beta: float = 0.12                 # transmission scale; default calibrated so
                                       # no-tracing runs land at R ~ 1.4 (scripts/calibrate.py)
    kappa: float = 0.6                 # carefulness damping on transmission

    def validate(self) -> None:
        lo, hi = self.carefulness_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"scenario.carefulness_range invalid: {self.carefulness_range}")
        for name in ("adoption_rate", "init_exposed_frac", "symptom_dropout",
                     "symptom_dropin", "quarantine_dropout_test",
                     "quarantine_dropout_household", "all_levels_dropout", "kappa"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"scenario.{name} out of range [0, 1]: {v!r}")
        for name in ("oracle_add_noise", "oracle_mul_noise", "mobility_factor", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"scenario.{name} must be >= 0")


@dataclass
class DiseaseConfig:
    """Disease-progression constants (transmission scale lives in ScenarioParams)."""

    asymptomatic_frac: float = 0.25  # infected agents that never show symptoms
    latent_min: int = 1              # zero-infectiousness days after exposure
    latent_max: int = 3
    peak_min: float = 0.3            # peak infectiousness (curve maximum)
    peak_max: float = 1.0
    incubation_shape: float = 4.0    # Gamma(shape, scale) days to curve peak
    incubation_scale: float = 1.25
    tail_min: int = 7                # days from peak back to zero
    tail_max: int = 14

    def validate(self) -> None:
        if not 0 <= self.asymptomatic_frac <= 1:
            raise ConfigError("disease.asymptomatic_frac must be in [0, 1]")
        if self.latent_min < 1 or self.latent_max < self.latent_min:
            raise ConfigError("disease latent range invalid")
        if self.tail_min < 1 or self.tail_max < self.tail_min:
            raise ConfigError("disease tail range invalid")
        if not 0 < self.peak_min <= self.peak_max <= 1.0:
            raise ConfigError("disease peak range invalid")


@dataclass
class ContactConfig:
    """Contact-graph constants: household cliques + random daily mixing."""

    household_max: int = 5       # household sizes drawn uniformly from 1..max
    hh_extra_mean: float = 1.0   # household pair encounters = 1 + Poisson(mean)
    out_rate: float = 6.0        # base Poisson rate of out-of-household stubs

    def validate(self) -> None:
        if self.household_max < 1:
            raise ConfigError("contacts.household_max must be >= 1")
        if self.out_rate < 0 or self.hh_extra_mean < 0:
            raise ConfigError("contact rates must be >= 0")


@dataclass
class TestingConfig:
    """Lab-test behaviour (independent of app adoption)."""

    daily_seek_scale: float = 0.35  # P(symptomatic agent seeks test) = scale * carefulness
    delay_days: int = 2             # days from swab to result
    false_negative: float = 0.25    # P(infected agent tests negative)
    cooldown_days: int = 7          # days before re-seeking after a negative

    def validate(self) -> None:
        if not 0 <= self.false_negative < 1:
            raise ConfigError("testing.false_negative must be in [0, 1)")
        if self.delay_days < 0 or self.cooldown_days < 0:
            raise ConfigError("testing delays must be >= 0")


@dataclass
class RecommendConfig:
    """Map from predicted infectiousness (today) to behaviour level 0..3."""

    thresholds: tuple[float, float, float] = (0.05, 0.2, 0.5)

    def validate(self) -> None:
        t = tuple(self.thresholds)
        if len(t) != 3 or not (t[0] < t[1] < t[2]):
            raise ConfigError(f"recommend.thresholds must be 3 increasing values, got {t}")


@dataclass
class HeuristicRules:
    """Score table for the rule-based predictor (all knobs are config data)."""

    positive_test_value: float = 1.0   # entry value across the positive-test window
    test_window: int = DAY_WINDOW      # days before a result covered by the test
    symptom_score: float = 0.05        # per reported symptom per day
    severe_factor: float = 2.0         # multiplier for fever/cough channels
    message_weight: float = 0.4        # scale of max-received-level contribution
    message_decay: float = 0.8         # geometric decay toward older offsets
    negative_test_factor: float = 0.5  # multiplies entries in a negative test's window

    def validate(self) -> None:
        if not 0 <= self.message_decay <= 1:
            raise ConfigError("heuristic.message_decay must be in [0, 1]")
        if self.test_window < 0:
            raise ConfigError("heuristic.test_window must be >= 0")


@dataclass
class SetNetConfig:
    """Deep-Set predictor architecture hyper-parameters."""

    width: int = 128        # common element width after input projection
    h_dim: int = 32         # health-status embedding size
    g_dim: int = 16         # profile embedding size
    day_dim: int = 8        # day-offset embedding size
    er_dim: int = 16        # risk-level embedding size
    en_dim: int = 16        # sinusoidal count-encoding size (even)
    n_blocks: int = 5       # set-processing blocks
    head_hidden: int = 64   # output head hidden width

    def validate(self) -> None:
        if self.en_dim % 2 != 0:
            raise ConfigError("setnet.en_dim must be even")
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"setnet.{f.name} must be >= 1")


@dataclass
class TrainConfig:
    """Optimization schedule (desk-scale defaults; see README for full scale)."""

    batch_size: int = 128
    warmup_steps: int = 200      # linear warmup 0 -> peak_lr
    cosine_steps: int = 4000     # cosine decay span down to final_lr after warmup
    peak_lr: float = 2e-4
    final_lr: float = 8e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 500        # validation cadence in steps
    patience: int = 5            # early-stop after this many evals w/o improvement
    seed: int = 0

    @property
    def max_steps(self) -> int:
        return self.warmup_steps + self.cosine_steps

    def validate(self) -> None:
        if self.batch_size < 1 or self.cosine_steps < 1:
            raise ConfigError("train.batch_size and train.cosine_steps must be >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("train.warmup_steps must be >= 0")
        if not 0 < self.final_lr <= self.peak_lr:
            raise ConfigError("train lr endpoints invalid")


@dataclass
class PipelineConfig:
    """Dataset generation + iterative retraining."""

    n_runs: int = 12                 # simulation runs per iteration
    val_every: int = 6               # every val_every-th run goes to validation
    n_agents: int = 600
    n_days: int = 40
    sample_keep_fraction: float = 1.0  # per-sample subsampling to bound size
    iterations: int = 3              # retraining iterations
    finetune_peak_lr: float = 5e-5   # peak lr for iterations > 1
    bins_runs: int = 4               # calibration runs used to fit risk bins

    def validate(self) -> None:
        if self.n_runs < 2 or self.val_every < 2:
            raise ConfigError("pipeline needs >= 2 runs and val_every >= 2")
        if not 0 < self.sample_keep_fraction <= 1:
            raise ConfigError("pipeline.sample_keep_fraction must be in (0, 1]")
        if self.iterations < 1:
            raise ConfigError("pipeline.iterations must be >= 1")


@dataclass
class SimConfig:
    """One simulation run: population, horizon, tracing method, scenario."""

    n_agents: int = 1000
    n_days: int = 50
    seed: int = 0
    method: str = "nt"
    checkpoint: str = ""     # network parameter file (method == "ds-pct")
    bins: str = ""           # risk-bin table JSON ("" = uniform unit-interval bins)
    force_level: int = -1    # -1 = off; 0..3 forces every agent's behaviour level
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    disease: DiseaseConfig = field(default_factory=DiseaseConfig)
    contacts: ContactConfig = field(default_factory=ContactConfig)
    testing: TestingConfig = field(default_factory=TestingConfig)
    recommend: RecommendConfig = field(default_factory=RecommendConfig)
    heuristic: HeuristicRules = field(default_factory=HeuristicRules)

    def validate(self) -> None:
        if self.n_agents < 1 or self.n_days < 1:
            raise ConfigError("n_agents and n_days must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "ds-pct" and not self.checkpoint:
            raise ConfigError("checkpoint required for method 'ds-pct'")
        if self.force_level not in (-1, 0, 1, 2, 3):
            raise ConfigError(f"force_level must be -1 or 0..3, got {self.force_level}")
        self.scenario.validate()
        self.disease.validate()
        self.contacts.validate()
        self.testing.validate()
        self.recommend.validate()
        self.heuristic.validate()


# --------------------------------------------------------------------------
# strict dict <-> dataclass conversion

def _build(cls: type, doc: dict[str, Any], path: str) -> Any:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs: dict[str, Any] = {}
    for name, value in doc.items():
        here = f"{path}.{name}" if path else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, here)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(cls: type, doc: dict[str, Any]) -> Any:
    """Build a config dataclass from a plain dict, rejecting unknown keys."""
    cfg = _build(cls, doc, "")
    cfg.validate()
    return cfg


def to_dict(cfg: Any) -> dict[str, Any]:
    """Dataclass -> plain dict (tuples become lists, JSON-ready)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg), default=list))


def load_config(path: str | Path, cls: type = SimConfig) -> Any:
    """Load and validate a JSON config file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(cls, doc)


def config_hash(cfg: Any) -> str:
    """Stable content hash of a (dataclass or dict) config."""
    doc = to_dict(cfg) if dataclasses.is_dataclass(cfg) else cfg
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]

"""Scenario randomization, dataset generation, and iterative retraining.

Datasets are built by running the simulator with either the noisy oracle or a
previously trained checkpoint driving the app users, and harvesting one
(observables, infectiousness-history) pair per app user per day.  Targets are
always read from simulator state — the generator asserts the provenance tag on
every sample.

Retraining alternates generation and fitting: iteration 1 trains from scratch
on oracle-driven data; iteration j > 1 regenerates data with checkpoint j-1
in the loop and fine-tunes it, so the network sees the message distribution
its own deployment induces.  Risk bins are calibrated once, from oracle runs
with separate seeds, and stay frozen across iterations.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import (PipelineConfig, ScenarioParams, SetNetConfig, SimConfig,
                     TrainConfig, config_hash, from_dict, to_dict)
from .epi.world import World
from .rng import DOM_BINS, DOM_DATASET, DOM_RUN, DOM_SCENARIO, DOM_TRAIN, make_rng, seed_seq
from .setnet.encoding import EncodedSamples, concat_samples, pack_samples
from .tracing import RiskBinTable, fit_bins

log = logging.getLogger(__name__)

# Uniform support for each randomized scenario field.
SCENARIO_RANGES: dict[str, tuple[float, float]] = {
    "adoption_rate": (0.30, 0.60),
    "carefulness": (0.5, 0.8),
    "init_exposed_frac": (0.002, 0.006),
    "oracle_add_noise": (0.05, 0.15),
    "oracle_mul_noise": (0.2, 0.8),
    "mobility_factor": (0.3, 0.9),
    "symptom_dropout": (0.1, 0.6),
    "symptom_dropin": (0.0001, 0.001),
    "quarantine_dropout_test": (0.01, 0.03),
    "quarantine_dropout_household": (0.02, 0.05),
    "all_levels_dropout": (0.01, 0.05),
}

# Population-% with the app vs the smartphone-uptake-% required to reach it.
ADOPTION_UPTAKE: tuple[tuple[float, float], ...] = (
    (1.0, 1.50), (30.0, 42.15), (40.0, 56.18), (60.0, 84.15), (70.0, 98.31))


def uptake_for_adoption(population_pct: float) -> float:
    """Smartphone-uptake % required for a population-% adoption (interpolated)."""
    xs = [a for a, _ in ADOPTION_UPTAKE]
    ys = [u for _, u in ADOPTION_UPTAKE]
    if not xs[0] <= population_pct <= xs[-1]:
        raise ValueError(f"adoption {population_pct}% outside table range "
                         f"[{xs[0]}, {xs[-1]}]")
    return float(np.interp(population_pct, xs, ys))


def adoption_for_uptake(uptake_pct: float) -> float:
    """Population-% adoption achieved at a given smartphone-uptake % (inverse)."""
    xs = [u for _, u in ADOPTION_UPTAKE]
    ys = [a for a, _ in ADOPTION_UPTAKE]
    if not xs[0] <= uptake_pct <= xs[-1]:
        raise ValueError(f"uptake {uptake_pct}% outside table range "
                         f"[{xs[0]}, {xs[-1]}]")
    return float(np.interp(uptake_pct, xs, ys))


def sample_scenario(rng: np.random.Generator, beta: float | None = None,
                    kappa: float | None = None) -> ScenarioParams:
    """Draw one domain-randomized scenario (uniform over SCENARIO_RANGES)."""
    defaults = ScenarioParams()
    r = SCENARIO_RANGES
    care = np.sort(rng.uniform(*r["carefulness"], size=2))
    return ScenarioParams(
        adoption_rate=float(rng.uniform(*r["adoption_rate"])),
        carefulness_range=(float(care[0]), float(care[1])),
        init_exposed_frac=float(rng.uniform(*r["init_exposed_frac"])),
        oracle_add_noise=float(rng.uniform(*r["oracle_add_noise"])),
        oracle_mul_noise=float(rng.uniform(*r["oracle_mul_noise"])),
        mobility_factor=float(rng.uniform(*r["mobility_factor"])),
        symptom_dropout=float(rng.uniform(*r["symptom_dropout"])),
        symptom_dropin=float(rng.uniform(*r["symptom_dropin"])),
        quarantine_dropout_test=float(rng.uniform(*r["quarantine_dropout_test"])),
        quarantine_dropout_household=float(rng.uniform(*r["quarantine_dropout_household"])),
        all_levels_dropout=float(rng.uniform(*r["all_levels_dropout"])),
        beta=defaults.beta if beta is None else beta,
        kappa=defaults.kappa if kappa is None else kappa,
    )


def _derived_seed(master: int, domain: int, index: int) -> int:
    state = seed_seq(master, domain, index).generate_state(1, np.uint32)
    return int(state[0]) or 1   # 0 means "inherit" in SimConfig; avoid it


# --------------------------------------------------------------------------
# dataset generation

@dataclass
class Dataset:
    train: EncodedSamples
    val: EncodedSamples
    manifest: dict[str, Any]


def _run_config(base: SimConfig, scenario: ScenarioParams, driver: str,
                checkpoint: str, bins_path: str) -> SimConfig:
    method = "oracle" if driver == "oracle" else "ds-pct"
    return replace(base, scenario=scenario, method=method,
                   checkpoint=checkpoint if driver == "model" else "",
                   bins=bins_path)


def _generate_one(args: tuple) -> tuple[EncodedSamples, dict[str, Any]]:
    cfg_dict, run_id, keep = args
    cfg = from_dict(SimConfig, cfg_dict)
    world = World(cfg, collect_samples=True, sample_keep=keep)
    world.run()
    packed = pack_samples(world.samples, run_id=run_id)
    record = {"run_id": run_id, "seed": cfg.scenario.seed,
              "scenario": to_dict(cfg.scenario),
              "n_samples": len(packed)}
    return packed, record


def generate_dataset(n_runs: int, driver: str, base: SimConfig, master_seed: int,
                     *, checkpoint: str = "", bins_path: str = "",
                     val_every: int = 6, keep_fraction: float = 1.0,
                     workers: int = 1) -> Dataset:
    """Run `n_runs` randomized simulations and harvest training samples.

    driver: "oracle" (noisy ground-truth oracle) or "model" (requires
    `checkpoint`); the chosen predictor drives app recommendations during
    generation.  Runs whose index satisfies ``i % val_every == val_every - 1``
    land in the validation split (5:1 at the default cadence).
    """
    if driver not in ("oracle", "model"):
        raise ValueError(f"unknown dataset driver {driver!r}")
    if driver == "model" and not checkpoint:
        raise ValueError("model driver requested but no checkpoint given")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")

    jobs = []
    for i in range(n_runs):
        rng = make_rng(master_seed, DOM_SCENARIO, i)
        scenario = sample_scenario(rng, beta=base.scenario.beta,
                                   kappa=base.scenario.kappa)
        scenario = replace(scenario, seed=_derived_seed(master_seed, DOM_RUN, i))
        cfg = _run_config(base, scenario, driver, checkpoint, bins_path)
        jobs.append((to_dict(cfg), i, keep_fraction))

    t0 = time.time()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, jobs))
    else:
        results = [_generate_one(j) for j in jobs]
    log.info("generated %d runs in %.1fs", n_runs, time.time() - t0)

    train_parts, val_parts, records = [], [], []
    for packed, record in results:
        is_val = record["run_id"] % val_every == val_every - 1
        record["split"] = "val" if is_val else "train"
        (val_parts if is_val else train_parts).append(packed)
        records.append(record)
    if not train_parts or not val_parts:
        raise ValueError(f"split produced an empty side (n_runs={n_runs}, "
                         f"val_every={val_every}); need runs on both sides")
    train = concat_samples(train_parts)
    val = concat_samples(val_parts)

    manifest = {
        "master_seed": master_seed,
        "n_runs": n_runs,
        "driver": driver,
        "checkpoint": checkpoint,
        "bins": bins_path,
        "val_every": val_every,
        "keep_fraction": keep_fraction,
        "config_hash": config_hash(base),
        "base_config": to_dict(base),
        "runs": records,
        "n_train": len(train),
        "n_val": len(val),
        "target_source": "simulator_truth",
    }
    return Dataset(train, val, manifest)


# --------------------------------------------------------------------------
# dataset serialization: JSONL (one sample per line) + packed npz

def write_jsonl(data: EncodedSamples, path: str | Path) -> None:
    with open(path, "w") as fh:
        for i in range(len(data)):
            row = {
                "run_id": int(data.run_id[i]),
                "agent_id": int(data.agent_id[i]),
                "day": int(data.day[i]),
                "target": [float(v) for v in data.target[i]],
                "profile": [float(v) for v in data.profile[i]],
                "statuses": data.statuses[i].tolist(),
                "clusters": data.clusters_of(i).tolist(),
            }
            fh.write(json.dumps(row) + "\n")


def read_jsonl(path: str | Path) -> EncodedSamples:
    statuses, profiles, targets, run_ids, agent_ids, days = [], [], [], [], [], []
    cluster_rows, bounds = [], [0]
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            statuses.append(np.asarray(row["statuses"], dtype=np.float32))
            profiles.append(np.asarray(row["profile"], dtype=np.float32))
            targets.append(np.asarray(row["target"], dtype=np.float32))
            run_ids.append(row["run_id"])
            agent_ids.append(row["agent_id"])
            days.append(row["day"])
            clusters = np.asarray(row["clusters"], dtype=np.int32).reshape(-1, 3)
            cluster_rows.append(clusters)
            bounds.append(bounds[-1] + clusters.shape[0])
    if not targets:
        raise ValueError(f"no samples in {path}")
    return EncodedSamples(
        statuses=np.stack(statuses), profile=np.stack(profiles),
        cluster_flat=(np.concatenate(cluster_rows) if bounds[-1]
                      else np.zeros((0, 3), dtype=np.int32)),
        cluster_bounds=np.asarray(bounds, dtype=np.int64),
        target=np.stack(targets),
        run_id=np.asarray(run_ids, dtype=np.int64),
        agent_id=np.asarray(agent_ids, dtype=np.int64),
        day=np.asarray(days, dtype=np.int64),
    )


_SPLIT_FIELDS = ("statuses", "profile", "cluster_flat", "cluster_bounds",
                 "target", "run_id", "agent_id", "day")


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    arrays: dict[str, np.ndarray] = {}
    for split_name, split in (("train", dataset.train), ("val", dataset.val)):
        for f in _SPLIT_FIELDS:
            arrays[f"{split_name}__{f}"] = getattr(split, f)
    blob = json.dumps(dataset.manifest, sort_keys=True).encode()
    arrays["manifest"] = np.frombuffer(blob, dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_dataset(path: str | Path) -> Dataset:
    with np.load(path) as z:
        manifest = json.loads(bytes(z["manifest"]).decode())
        splits = {}
        for split_name in ("train", "val"):
            splits[split_name] = EncodedSamples(
                **{f: z[f"{split_name}__{f}"] for f in _SPLIT_FIELDS})
    return Dataset(splits["train"], splits["val"], manifest)


# --------------------------------------------------------------------------
# risk-bin calibration

def collect_calibration_risks(base: SimConfig, master_seed: int, n_runs: int
                              ) -> np.ndarray:
    """Positive risk values emitted during noise-free oracle runs.

    Calibration is the codebook-design step, so it runs the oracle with both
    noise scales at zero: healthy agents emit exact zeros (no message
    information, level 0 structurally) and the positive support is the true
    infectiousness scale.  Equal-mass thresholds over that support put the top
    levels well above any scenario's additive-noise floor, so a hot message in
    a deployed run implies a genuinely infectious sender instead of a lucky
    noise draw.
    """
    values = []
    for i in range(n_runs):
        rng = make_rng(master_seed, DOM_BINS, i)
        scenario = sample_scenario(rng, beta=base.scenario.beta,
                                   kappa=base.scenario.kappa)
        scenario = replace(scenario, seed=_derived_seed(master_seed, DOM_BINS, i),
                           oracle_add_noise=0.0, oracle_mul_noise=0.0)
        cfg = replace(base, scenario=scenario, method="oracle", bins="",
                      checkpoint="")
        world = World(cfg, collect_risk=True)
        world.run()
        values.extend(world.risk_values)
    risks = np.concatenate(values)
    return risks[risks > 0.0]


def fit_calibration_bins(base: SimConfig, master_seed: int, n_runs: int
                         ) -> RiskBinTable:
    """Fit the 16-level quantizer from oracle runs with separate seeds."""
    return fit_bins(collect_calibration_risks(base, master_seed, n_runs))


# --------------------------------------------------------------------------
# iterative retraining

@dataclass
class IterationReport:
    iteration: int
    checkpoint: str
    driver: str
    n_train: int
    n_val: int
    steps: int
    best_val_mse: float
    baseline_mse: float            # mean predictor on this iteration's val split
    prev_val_mse: float | None     # previous checkpoint scored on the same split

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def iterative_retrain(k: int, base: SimConfig, pipe: PipelineConfig,
                      net: SetNetConfig, train_cfg: TrainConfig,
                      master_seed: int, out_dir: str | Path,
                      workers: int = 1, save_datasets: bool = False
                      ) -> tuple[list[str], list[IterationReport]]:
    """Run k generate-train iterations; returns checkpoint paths + reports.

    Iteration 1 generates with the noisy oracle and trains from scratch;
    later iterations generate with the previous checkpoint driving the app
    and fine-tune it (lower peak lr, fresh optimizer moments).  Aborts with
    diagnostics if any iteration's validation MSE exceeds 10x the
    mean-predictor baseline.
    """
    # torch stays an optional import for simulation-only use of this module
    from .setnet.model import load_params, save_params
    from .setnet.training import evaluate, mean_predictor_mse, train

    if k < 1:
        raise ValueError("k must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    bins = fit_calibration_bins(base, master_seed, pipe.bins_runs)
    bins_path = out / "bins.json"
    bins.save(bins_path)
    log.info("calibrated risk bins from %d oracle runs -> %s",
             pipe.bins_runs, bins_path)

    gen_base = replace(base, n_agents=pipe.n_agents, n_days=pipe.n_days)
    checkpoints: list[str] = []
    reports: list[IterationReport] = []
    model = None

    for j in range(1, k + 1):
        driver = "oracle" if j == 1 else "model"
        dataset = generate_dataset(
            pipe.n_runs, driver, gen_base,
            master_seed=_derived_seed(master_seed, DOM_DATASET, j),
            checkpoint=checkpoints[-1] if checkpoints else "",
            bins_path=str(bins_path), val_every=pipe.val_every,
            keep_fraction=pipe.sample_keep_fraction, workers=workers)
        if save_datasets:
            save_dataset(out / f"dataset_{j}.npz", dataset)
        baseline = mean_predictor_mse(dataset.train.target, dataset.val.target)

        if j == 1:
            from .setnet.training import init_model
            model = init_model(net, seed=train_cfg.seed)
            cfg_j = train_cfg
            prev_val = None
        else:
            model, _ = load_params(checkpoints[-1])
            prev_val = evaluate(model, dataset.val)
            cfg_j = replace(train_cfg, peak_lr=pipe.finetune_peak_lr,
                            seed=_derived_seed(train_cfg.seed, DOM_TRAIN, j))

        result = train(model, dataset.train, dataset.val, cfg_j,
                       log_path=out / f"train_{j}.csv")
        if result.best_val > 10.0 * baseline:
            raise TrainingDiverged(
                f"iteration {j} diverged: val MSE {result.best_val:.6g} > "
                f"10x mean-predictor baseline {baseline:.6g} "
                f"(steps={result.steps}, driver={driver})")

        path = out / f"ckpt_{j}.npz"
        manifest_lite = {key: dataset.manifest[key] for key in
                         ("master_seed", "n_runs", "driver", "config_hash",
                          "n_train", "n_val")}
        save_params(path, model, extra={
            "iteration": j,
            "val_mse": result.best_val,
            "bins": list(bins.thresholds),
            "dataset": manifest_lite,
        })
        checkpoints.append(str(path))
        reports.append(IterationReport(
            iteration=j, checkpoint=str(path), driver=driver,
            n_train=len(dataset.train), n_val=len(dataset.val),
            steps=result.steps, best_val_mse=result.best_val,
            baseline_mse=baseline, prev_val_mse=prev_val))
        log.info("iteration %d: val MSE %.6g (baseline %.6g, prev %s)",
                 j, result.best_val, baseline,
                 "n/a" if prev_val is None else f"{prev_val:.6g}")

    with open(out / "report.json", "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
    return checkpoints, reports

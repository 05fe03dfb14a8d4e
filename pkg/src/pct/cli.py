"""`pct` command line: simulate / bins / gen-data / train / retrain / sweep / plot.

Every command writes into ``out/<subcommand>/<timestamp>-<confighash>/``
unless ``--out`` overrides it, and drops a ``manifest.json`` (resolved config,
config hash, seed, argv) sufficient to reproduce the artifacts byte-for-byte.

Exit codes: 0 all work succeeded; 2 invalid configuration or a sweep with
per-cell failures; 1 other runtime failure.  ``PCT_THREADS`` sets the worker
count for parallel runs and torch's thread pool (default 1).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (METHODS, ConfigError, PipelineConfig, SetNetConfig,
                     SimConfig, TrainConfig, config_hash, from_dict,
                     load_config, to_dict)
from .rng import DOM_EVAL, seed_seq

log = logging.getLogger("pct")

# Command line recorded in manifests; set by main() so programmatic
# invocations (main(argv)) don't pick up the host process's sys.argv.
_invocation_argv: list[str] = []


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PCT_THREADS", "1")))
    except ValueError:
        return 1


def _out_dir(subcommand: str, cfg_hash: str, override: str | None) -> Path:
    if override:
        out = Path(override)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path("out") / subcommand / f"{stamp}-{cfg_hash}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, subcommand: str, cfg_doc: dict, seed: int,
                    **extra) -> None:
    doc = {
        "command": subcommand,
        "argv": _invocation_argv,
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": seed,
        "config": cfg_doc,
        "config_hash": config_hash(cfg_doc),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def _sim_config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if getattr(args, "agents", None):
        cfg = replace(cfg, n_agents=args.agents)
    if getattr(args, "days", None):
        cfg = replace(cfg, n_days=args.days)
    if getattr(args, "method", None):
        cfg = replace(cfg, method=args.method)
    if getattr(args, "checkpoint", None):
        cfg = replace(cfg, checkpoint=args.checkpoint)
    if getattr(args, "bins", None):
        cfg = replace(cfg, bins=args.bins)
    if getattr(args, "force_level", -1) >= 0:
        cfg = replace(cfg, force_level=args.force_level)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed,
                      scenario=replace(cfg.scenario, seed=args.seed))
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    from .epi.world import World
    from .metrics import summarize, write_run_csv

    cfg = _sim_config(args)
    out = _out_dir("simulate", config_hash(cfg), args.out)
    result = World(cfg).run()
    summary = summarize(result)

    with open(out / "events.jsonl", "w") as fh:
        for event in result.event_log:
            fh.write(json.dumps(event) + "\n")
    write_run_csv(result, out / "metrics.csv")
    (out / "summary.json").write_text(json.dumps({
        "method": summary.method, "seed": summary.seed,
        "n_agents": summary.n_agents, "n_days": summary.n_days,
        "r": summary.r, "r_defined": summary.r_defined,
        "cum_cases": summary.cum_cases, "attack_rate": summary.attack_rate,
        "mean_contacts": summary.mean_contacts,
        "mean_false_quarantine": summary.mean_false_quarantine,
        "anomalies": result.anomalies,
        "config_hash": config_hash(cfg),
    }, indent=2) + "\n")
    _write_manifest(out, "simulate", to_dict(cfg), summary.seed)
    r_text = f"{summary.r:.3f}" if summary.r is not None else "undefined"
    log.info("method=%s R=%s cases=%d contacts/day=%.2f -> %s",
             summary.method, r_text, summary.cum_cases,
             summary.mean_contacts, out)
    return 0


# --------------------------------------------------------------------------
# bins

def cmd_bins(args) -> int:
    from .pipeline import fit_calibration_bins

    cfg = _sim_config(args)
    out = _out_dir("bins", config_hash(cfg), args.out)
    table = fit_calibration_bins(cfg, args.seed or cfg.seed, args.runs)
    table.save(out / "bins.json")
    _write_manifest(out, "bins", to_dict(cfg), args.seed or cfg.seed,
                    runs=args.runs)
    log.info("fit %d thresholds from %d oracle runs -> %s",
             len(table.thresholds), args.runs, out / "bins.json")
    return 0


# --------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    from .pipeline import generate_dataset, save_dataset, write_jsonl

    cfg = _sim_config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    out = _out_dir("gen-data", config_hash(cfg), args.out)
    dataset = generate_dataset(
        args.runs, args.driver, cfg, master_seed=seed,
        checkpoint=args.checkpoint or "", bins_path=args.bins or "",
        val_every=args.val_every, keep_fraction=args.keep,
        workers=_workers())
    save_dataset(out / "dataset.npz", dataset)
    if args.jsonl:
        write_jsonl(dataset.train, out / "train.jsonl")
        write_jsonl(dataset.val, out / "val.jsonl")
    (out / "dataset_manifest.json").write_text(
        json.dumps(dataset.manifest, indent=2) + "\n")
    _write_manifest(out, "gen-data", to_dict(cfg), seed,
                    n_train=len(dataset.train), n_val=len(dataset.val))
    log.info("%d runs -> %d train / %d val samples -> %s",
             args.runs, len(dataset.train), len(dataset.val), out)
    return 0


# --------------------------------------------------------------------------
# train

def _train_configs(args) -> tuple[SetNetConfig, TrainConfig]:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    net = from_dict(SetNetConfig, doc.get("net", {}))
    tcfg = from_dict(TrainConfig, doc.get("train", {}))
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.peak_lr:
        tcfg = replace(tcfg, peak_lr=args.peak_lr)
    if args.batch_size:
        tcfg = replace(tcfg, batch_size=args.batch_size)
    if args.width:
        net = replace(net, width=args.width)
    return net, tcfg


def cmd_train(args) -> int:
    from .pipeline import load_dataset
    from .setnet.model import save_params
    from .setnet.training import (init_model, mean_predictor_mse,
                                  setup_torch_threads, train)
    from .tracing import RiskBinTable

    net, tcfg = _train_configs(args)
    cfg_doc = {"net": to_dict(net), "train": to_dict(tcfg)}
    out = _out_dir("train", config_hash(cfg_doc), args.out)
    dataset = load_dataset(args.dataset)
    setup_torch_threads()
    model = init_model(net, seed=tcfg.seed)
    result = train(model, dataset.train, dataset.val, tcfg,
                   log_path=out / "train_log.csv")
    baseline = mean_predictor_mse(dataset.train.target, dataset.val.target)
    extra = {"val_mse": result.best_val, "baseline_mse": baseline,
             "dataset": args.dataset,
             "dataset_hash": dataset.manifest.get("config_hash", "")}
    if args.bins:
        extra["bins"] = list(RiskBinTable.load(args.bins).thresholds)
    save_params(out / "ckpt.npz", model, extra=extra)
    _write_manifest(out, "train", cfg_doc, tcfg.seed,
                    val_mse=result.best_val, baseline_mse=baseline,
                    steps=result.steps)
    log.info("trained %d steps, val MSE %.6g (mean-predictor %.6g) -> %s",
             result.steps, result.best_val, baseline, out / "ckpt.npz")
    return 0


# --------------------------------------------------------------------------
# retrain

def cmd_retrain(args) -> int:
    from .pipeline import iterative_retrain

    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    base = from_dict(SimConfig, doc.get("sim", {}))
    pipe = from_dict(PipelineConfig, doc.get("pipeline", {}))
    net = from_dict(SetNetConfig, doc.get("net", {}))
    tcfg = from_dict(TrainConfig, doc.get("train", {}))
    if args.runs:
        pipe = replace(pipe, n_runs=args.runs)
    if args.agents:
        pipe = replace(pipe, n_agents=args.agents)
    if args.days:
        pipe = replace(pipe, n_days=args.days)
    seed = args.seed if args.seed is not None else base.seed
    cfg_doc = {"sim": to_dict(base), "pipeline": to_dict(pipe),
               "net": to_dict(net), "train": to_dict(tcfg)}
    out = _out_dir("retrain", config_hash(cfg_doc), args.out)
    checkpoints, reports = iterative_retrain(
        args.iterations, base, pipe, net, tcfg, master_seed=seed,
        out_dir=out, workers=_workers())
    _write_manifest(out, "retrain", cfg_doc, seed,
                    checkpoints=checkpoints,
                    reports=[r.to_dict() for r in reports])
    for r in reports:
        log.info("iteration %d (%s): val MSE %.6g, baseline %.6g, prev %s",
                 r.iteration, r.driver, r.best_val_mse, r.baseline_mse,
                 "n/a" if r.prev_val_mse is None else f"{r.prev_val_mse:.6g}")
    return 0


# --------------------------------------------------------------------------
# sweep

def _cell_seed(master: int, method: str, value: float, rep: int) -> int:
    key = (DOM_EVAL, zlib.crc32(method.encode()), int(round(value * 10_000)), rep)
    return int(seed_seq(master, *key).generate_state(1, np.uint32)[0]) or 1


def _sweep_cell(job: tuple) -> tuple[int, dict | None, str]:
    index, cfg_doc = job
    from .epi.world import World
    from .metrics import summarize
    try:
        cfg = from_dict(SimConfig, cfg_doc)
        summary = summarize(World(cfg).run())
        return index, summary, ""
    except Exception as exc:    # per-cell isolation: the sweep must go on
        return index, None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    from concurrent.futures import ProcessPoolExecutor

    from .metrics import (SweepCell, binned_pareto, bootstrap_compare,
                          write_sweep_csv)
    from .pipeline import adoption_for_uptake

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if not methods or unknown:
        raise ConfigError(f"methods must be a non-empty subset of {METHODS}; "
                          f"got {unknown or 'nothing'}")
    if bool(args.mobility) == bool(args.adoption):
        raise ConfigError("exactly one of --mobility/--adoption is required")
    grid_var = "mobility" if args.mobility else "adoption"
    values = [float(v) for v in (args.mobility or args.adoption).split(",") if v]
    if not values:
        raise ConfigError("empty grid")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")

    base = _sim_config(args)
    master = args.seed if args.seed is not None else base.seed

    jobs, cells = [], []
    for method in methods:
        for value in values:
            for rep in range(args.seeds):
                scenario = base.scenario
                if grid_var == "mobility":
                    scenario = replace(scenario, mobility_factor=value)
                else:
                    pct_pop = (adoption_for_uptake(value)
                               if args.adoption_unit == "uptake" else value)
                    scenario = replace(scenario, adoption_rate=pct_pop / 100.0)
                scenario = replace(scenario,
                                   seed=_cell_seed(master, method, value, rep))
                cfg = replace(base, method=method, scenario=scenario)
                cells.append(SweepCell(method, grid_var, value,
                                       scenario.seed, None))
                jobs.append((len(jobs), to_dict(cfg)))

    out = _out_dir("sweep", config_hash(to_dict(base)), args.out)
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    for index, summary, error in results:
        cells[index].summary = summary
        cells[index].error = error

    write_sweep_csv(cells, out / "sweep.csv")
    binned = binned_pareto(cells)
    with open(out / "binned.csv", "w") as fh:
        fh.write("contacts_bin,mean_r,stderr_r,n_runs\n")
        for row in binned:
            fh.write(f"{row['contacts_bin']},{row['mean_r']},"
                     f"{row['stderr_r']},{row['n_runs']}\n")

    r_by_method = {m: [c.summary.r for c in cells
                       if c.method == m and c.summary is not None
                       and c.summary.r is not None]
                   for m in methods}
    r_by_method = {m: rs for m, rs in r_by_method.items() if len(rs) >= 2}
    if len(r_by_method) >= 1:
        stats, pvals = bootstrap_compare(r_by_method)
        (out / "compare.json").write_text(json.dumps({
            "methods": [vars(s) for s in stats],
            "permutation_pvalues": {f"{a}|{b}": p for (a, b), p in pvals.items()},
        }, indent=2) + "\n")

    failures = [(c.method, c.grid_value, c.seed, c.error)
                for c in cells if c.summary is None]
    _write_manifest(out, "sweep", to_dict(base), master,
                    methods=methods, grid_var=grid_var, grid=values,
                    seeds=args.seeds, n_cells=len(cells),
                    n_failed=len(failures))
    log.info("%d cells (%d failed) -> %s", len(cells), len(failures), out)
    if failures:
        print("failed cells:", file=sys.stderr)
        for method, value, seed, error in failures:
            print(f"  {method} {grid_var}={value} seed={seed}: {error}",
                  file=sys.stderr)
        return 2
    return 0


# --------------------------------------------------------------------------
# plot

def cmd_plot(args) -> int:
    from . import plotting

    out = _out_dir("plot", args.figure, args.out)
    if args.figure == "pareto":
        files = plotting.emit_pareto(args.input[0], out)
    elif args.figure == "methods":
        files = plotting.emit_methods(args.input[0], out)
    elif args.figure == "adoption":
        files = plotting.emit_adoption(args.input[0], out)
    else:
        labels = (args.labels.split(",") if args.labels
                  else [Path(p).parent.name for p in args.input])
        files = plotting.emit_cases(args.input, labels, out)
    _write_manifest(out, "plot", {"figure": args.figure,
                                  "input": list(args.input)}, 0)
    log.info("emitted %s", ", ".join(str(f) for f in files))
    return 0


# --------------------------------------------------------------------------
# parser

def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON simulation config file")
    p.add_argument("--agents", type=int, help="population size")
    p.add_argument("--days", type=int, help="horizon in days")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--checkpoint", help="trained model parameters (.npz)")
    p.add_argument("--bins", help="risk bin table (.json)")
    p.add_argument("--out", help="output directory (default out/<cmd>/<stamp>-<hash>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pct",
        description="Agent-based epidemic testbed for proactive contact tracing.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="run one simulation")
    _add_sim_flags(p)
    p.add_argument("--method", choices=METHODS, help="tracing method")
    p.add_argument("--force-level", type=int, default=-1, dest="force_level",
                   help="pin everyone's behavior level (diagnostics)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bins", help="calibrate the 16-level risk quantizer")
    _add_sim_flags(p)
    p.add_argument("--runs", type=int, default=8,
                   help="oracle calibration runs (separate seeds)")
    p.set_defaults(func=cmd_bins)

    p = sub.add_parser("gen-data", help="generate a supervised dataset")
    _add_sim_flags(p)
    p.add_argument("--runs", type=int, default=24, help="simulation runs")
    p.add_argument("--driver", choices=("oracle", "model"), default="oracle")
    p.add_argument("--val-every", type=int, default=6, dest="val_every",
                   help="every k-th run goes to validation (5:1 at 6)")
    p.add_argument("--keep", type=float, default=1.0,
                   help="fraction of samples kept per run")
    p.add_argument("--jsonl", action="store_true",
                   help="also write train/val JSONL")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the risk network on a dataset")
    p.add_argument("--dataset", required=True, help="dataset .npz from gen-data")
    p.add_argument("--config", help='JSON {"net": {...}, "train": {...}}')
    p.add_argument("--bins", help="bin table to record in the checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--peak-lr", type=float, dest="peak_lr")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--width", type=int, help="trunk width override")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrain", help="iterative generate-train loop")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--config",
                   help='JSON {"sim":…, "pipeline":…, "net":…, "train":…}')
    p.add_argument("--runs", type=int, help="simulation runs per iteration")
    p.add_argument("--agents", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("sweep", help="grid of runs over mobility or adoption")
    _add_sim_flags(p)
    p.add_argument("--methods", required=True,
                   help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--mobility", help="comma-separated mobility factors")
    p.add_argument("--adoption", help="comma-separated adoption percentages")
    p.add_argument("--adoption-unit", choices=("population", "uptake"),
                   default="population", dest="adoption_unit")
    p.add_argument("--seeds", type=int, default=12, help="repeats per cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="emit gnuplot data + script for a figure")
    p.add_argument("--figure", required=True,
                   choices=("pareto", "cases", "methods", "adoption"))
    p.add_argument("--input", nargs="+", required=True,
                   help="sweep.csv (pareto/methods/adoption) or metrics.csv files (cases)")
    p.add_argument("--labels", help="comma-separated labels for cases")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    global _invocation_argv
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _invocation_argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(_invocation_argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:    # pragma: no cover - operational failures
        log.exception("command failed")
        return 1


if __name__ == "__main__":
    sys.exit(main())

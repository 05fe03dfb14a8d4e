"""End-to-end desk-scale run of the full workflow, CLI-equivalent:

  1. iterative retraining (bins -> oracle data -> train -> model data -> tune)
  2. method comparison sweep with the final checkpoint
  3. gnuplot panels

Writes everything under --out (default out/desk).  Roughly 15-30 min on a
single core at the default sizes; shrink --runs/--agents for a smoke run.
"""
import argparse
import logging
from pathlib import Path

from pct.cli import main as pct

logging.basicConfig(level=logging.INFO, format="%(message)s")


def run():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out/desk")
    ap.add_argument("--iterations", type=int, default=2)
    ap.add_argument("--runs", type=int, default=12, help="generation runs/iteration")
    ap.add_argument("--agents", type=int, default=600)
    ap.add_argument("--days", type=int, default=40)
    ap.add_argument("--eval-agents", type=int, default=1000)
    ap.add_argument("--eval-days", type=int, default=50)
    ap.add_argument("--seeds", type=int, default=12)
    ap.add_argument("--seed", type=int, default=2026)
    args = ap.parse_args()
    out = Path(args.out)

    rc = pct(["retrain", "--iterations", str(args.iterations),
              "--runs", str(args.runs), "--agents", str(args.agents),
              "--days", str(args.days), "--seed", str(args.seed),
              "--out", str(out / "retrain")])
    assert rc == 0, "retrain failed"
    ckpt = out / "retrain" / f"ckpt_{args.iterations}.npz"
    bins = out / "retrain" / "bins.json"

    rc = pct(["sweep", "--methods", "nt,bct,heuristic,ds-pct",
              "--mobility", "0.5,0.6,0.7", "--seeds", str(args.seeds),
              "--agents", str(args.eval_agents), "--days", str(args.eval_days),
              "--seed", str(args.seed + 1), "--checkpoint", str(ckpt),
              "--bins", str(bins), "--out", str(out / "sweep")])
    assert rc == 0, "sweep failed"

    for fig in ("pareto", "methods"):
        pct(["plot", "--figure", fig, "--input", str(out / "sweep" / "sweep.csv"),
             "--out", str(out / "plots")])
    print(f"done -> {out}")


if __name__ == "__main__":
    run()

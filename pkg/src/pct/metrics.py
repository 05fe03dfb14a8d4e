"""Evaluation metrics: infection-tree R, false quarantine, sweeps, bootstrap.

The reproduction number is estimated on the infection tree at the run horizon:

    R = (# infectees whose infector has recovered)
        / (# recovered agents that were themselves infected by another agent)

Runs with an empty denominator have no defined R and are excluded (never
imputed) — callers get :class:`RUndefined`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .epi import disease
from .epi.world import RunResult


class RUndefined(RuntimeError):
    """No recovered infectors: R undefined for this run."""


class MetricsError(RuntimeError):
    pass


@dataclass(frozen=True)
class InfectionTree:
    """Who-infected-whom forest; roots are the initially exposed agents."""

    edges: tuple[tuple[int, int, int], ...]   # (infector, infectee, day)
    roots: tuple[int, ...]

    def __post_init__(self) -> None:
        infectees = [e[1] for e in self.edges]
        if len(set(infectees)) != len(infectees):
            raise MetricsError("infection tree is not a forest (duplicate infectee)")
        if set(self.roots) & set(infectees):
            raise MetricsError("a root cannot also be an infectee")
        day_infected = {c: d for _, c, d in self.edges}
        exposed = set(self.roots) | set(day_infected)
        for parent, child, day in self.edges:
            if parent not in exposed:
                raise MetricsError(f"infector {parent} was never exposed")
            if parent in day_infected and day < day_infected[parent]:
                raise MetricsError("edge days must be non-decreasing along paths")

    @classmethod
    def from_run(cls, result: RunResult) -> "InfectionTree":
        return cls(tuple((i, j, d) for i, j, d, _ in result.tree_edges),
                   tuple(result.roots))


def estimate_r(tree: InfectionTree, recovered: Iterable[int]) -> float:
    """Infected children per recovered (non-seed) infected agent at horizon."""
    recovered = set(recovered)
    children_of_recovered = sum(1 for parent, _, _ in tree.edges if parent in recovered)
    infected_agents = {child for _, child, _ in tree.edges}
    parents = infected_agents & recovered
    if not parents:
        raise RUndefined("R undefined for this run")
    return children_of_recovered / len(parents)


def false_quarantine_fraction(levels: np.ndarray, compartments: np.ndarray) -> float:
    """Fraction of the population recommended quarantine while S or R."""
    healthy = ((compartments == disease.SUSCEPTIBLE)
               | (compartments == disease.RECOVERED))
    return float(((levels == 3) & healthy).mean())


# --------------------------------------------------------------------------
# run summaries

@dataclass
class RunSummary:
    """Digest of one finished run, as consumed by sweeps and reports."""

    method: str
    seed: int
    scenario: dict[str, Any]
    n_agents: int
    n_days: int
    r: float | None                  # None when undefined at horizon
    mean_contacts: float
    cum_cases: int
    attack_rate: float
    mean_false_quarantine: float
    series: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def r_defined(self) -> bool:
        return self.r is not None


def summarize(result: RunResult) -> RunSummary:
    recovered = np.flatnonzero(result.final_compartments == disease.RECOVERED)
    try:
        r = estimate_r(InfectionTree.from_run(result), (int(a) for a in recovered))
    except RUndefined:
        r = None
    cum = int(result.series["cum_cases"][-1])
    return RunSummary(
        method=result.method, seed=result.seed, scenario=result.scenario,
        n_agents=result.n_agents, n_days=result.n_days, r=r,
        mean_contacts=result.mean_contacts, cum_cases=cum,
        attack_rate=cum / result.n_agents,
        mean_false_quarantine=float(result.series["false_quarantine"].mean()),
        series=result.series,
    )


def contacts_window(summaries: Sequence[RunSummary], center: float,
                    half_width: float = 0.5) -> list[RunSummary]:
    """Filter runs whose effective contacts/day fall inside (center +/- half_width)."""
    return [s for s in summaries
            if center - half_width < s.mean_contacts < center + half_width]


# --------------------------------------------------------------------------
# sweeps

@dataclass
class SweepCell:
    method: str
    grid_var: str          # "mobility" or "adoption"
    grid_value: float
    seed: int
    summary: RunSummary | None
    error: str = ""


def binned_pareto(cells: Sequence[SweepCell], bin_width: float = 0.5
                  ) -> list[dict[str, float]]:
    """Equal-width contact bins with mean R +/- standard error per bin."""
    ok = [c.summary for c in cells if c.summary is not None and c.summary.r_defined]
    rows = []
    if not ok:
        return rows
    contacts = np.array([s.mean_contacts for s in ok])
    rs = np.array([s.r for s in ok])
    lo = math.floor(contacts.min() / bin_width) * bin_width
    hi = math.ceil(contacts.max() / bin_width) * bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    which = np.digitize(contacts, edges) - 1
    for b in range(edges.size):
        in_bin = which == b
        n = int(in_bin.sum())
        if n == 0:
            continue
        vals = rs[in_bin]
        rows.append({
            "contacts_bin": float(edges[b] + bin_width / 2),
            "mean_r": float(vals.mean()),
            "stderr_r": float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "n_runs": n,
        })
    return rows


# --------------------------------------------------------------------------
# bootstrap + permutation statistics

def bootstrap_means(values: Sequence[float], resamples: int,
                    rng: np.random.Generator) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    if vals.size < 2:
        raise MetricsError("bootstrap needs >= 2 runs")
    picks = rng.integers(0, vals.size, size=(resamples, vals.size))
    return vals[picks].mean(axis=1)


def permutation_pvalue(x: Sequence[float], y: Sequence[float], resamples: int,
                       rng: np.random.Generator, alternative: str = "two-sided"
                       ) -> float:
    """P-value for mean(x) - mean(y) under the label-permutation null.

    ``alternative``: "two-sided" or "greater" (mean(x) > mean(y)).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise MetricsError("permutation test needs >= 2 runs per method")
    observed = x.mean() - y.mean()
    pooled = np.concatenate([x, y])
    count = 0
    for _ in range(resamples):
        perm = rng.permutation(pooled)
        diff = perm[:x.size].mean() - perm[x.size:].mean()
        if alternative == "greater":
            count += diff >= observed
        else:
            count += abs(diff) >= abs(observed)
    # add-one smoothing keeps p > 0 with finite resamples
    return (count + 1) / (resamples + 1)


def bootstrap_order_fraction(low: Sequence[float], high: Sequence[float],
                             resamples: int, rng: np.random.Generator) -> float:
    """Fraction of paired bootstrap resamples with mean(low) <= mean(high)."""
    bl = bootstrap_means(low, resamples, rng)
    bh = bootstrap_means(high, resamples, rng)
    return float((bl <= bh).mean())


@dataclass
class MethodStats:
    method: str
    n_runs: int
    mean_r: float
    boot_median: float
    boot_q25: float
    boot_q75: float


def bootstrap_compare(r_by_method: dict[str, Sequence[float]],
                      resamples: int = 10_000,
                      rng: np.random.Generator | None = None
                      ) -> tuple[list[MethodStats], dict[tuple[str, str], float]]:
    """Bootstrapped mean-R distributions + pairwise two-sided permutation p-values."""
    rng = rng if rng is not None else np.random.default_rng(0)
    stats: list[MethodStats] = []
    for method, rs in r_by_method.items():
        boot = bootstrap_means(rs, resamples, rng)
        q25, med, q75 = np.percentile(boot, [25, 50, 75])
        stats.append(MethodStats(method, len(rs), float(np.mean(rs)),
                                 float(med), float(q25), float(q75)))
    pvals: dict[tuple[str, str], float] = {}
    names = list(r_by_method)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            pvals[(a, b)] = permutation_pvalue(r_by_method[a], r_by_method[b],
                                               resamples, rng)
    return stats, pvals


# --------------------------------------------------------------------------
# CSV output

RUN_CSV_COLUMNS = ("day", "S", "E", "I", "R", "new_cases", "cum_cases", "contacts",
                   "false_quarantine", "tests", "level0", "level1", "level2", "level3")


def write_run_csv(result: RunResult, path: str | Path) -> None:
    s = result.series
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_CSV_COLUMNS)
        for d in range(result.n_days):
            w.writerow([d] + [fmt(s[k][d]) for k in RUN_CSV_COLUMNS[1:10]]
                       + [int(c) for c in result.level_counts[d]])


def fmt(v) -> int | float:
    f = float(v)
    return int(f) if f.is_integer() else f


def write_sweep_csv(cells: Sequence[SweepCell], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "grid_var", "grid_value", "seed", "r", "r_defined",
                    "contacts", "cum_cases", "attack_rate", "false_quarantine",
                    "error"])
        for c in cells:
            s = c.summary
            if s is None:
                w.writerow([c.method, c.grid_var, c.grid_value, c.seed]
                           + [""] * 6 + [c.error])
            else:
                w.writerow([c.method, c.grid_var, c.grid_value, c.seed,
                            "" if s.r is None else s.r, int(s.r_defined),
                            s.mean_contacts, s.cum_cases, s.attack_rate,
                            s.mean_false_quarantine, c.error])

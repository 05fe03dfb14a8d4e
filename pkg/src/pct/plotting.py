"""Gnuplot emitters: each figure writes a .dat table and a .gp script.

Render with `gnuplot <name>.gp` (produces <name>.png); the .dat files are
plain whitespace tables and import cleanly into anything else.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

FIGURES = ("pareto", "cases", "methods", "adoption")


def _read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _script(path: Path, title: str, ylabel: str, xlabel: str,
            plot_lines: list[str], extra: str = "") -> None:
    name = path.stem
    joined = ", \\\n     ".join(plot_lines)
    path.write_text(
        f"set terminal pngcairo size 900,600\n"
        f"set output '{name}.png'\n"
        f"set title '{title}'\n"
        f"set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"
        f"set key outside right\nset grid\n{extra}"
        f"plot {joined}\n")


def emit_pareto(sweep_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """R vs effective contacts/day, one errorbar series per method."""
    rows = [r for r in _read_csv(sweep_csv) if r["r_defined"] == "1"]
    if not rows:
        raise ValueError(f"no rows with defined R in {sweep_csv}")
    by_method: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for r in rows:
        by_method[r["method"]].append((float(r["contacts"]), float(r["r"])))
    out = Path(out_dir)
    dat = out / "pareto.dat"
    lines, plots = [], []
    for idx, (method, pts) in enumerate(sorted(by_method.items())):
        lines.append(f"# {method}")
        lines += [f"{c:.4f} {r:.4f}" for c, r in sorted(pts)]
        lines.append("\n")
        plots.append(f"'pareto.dat' index {idx} with points pt 7 title '{method}'")
    dat.write_text("\n".join(lines))
    gp = out / "pareto.gp"
    _script(gp, "Reproduction number vs mobility", "R at horizon",
            "effective contacts per day", plots, extra="set yrange [0:*]\n")
    return [dat, gp]


def emit_cases(run_csvs: list[str | Path], labels: list[str],
               out_dir: str | Path) -> list[Path]:
    """Cumulative cases per day, one series per run CSV."""
    if len(run_csvs) != len(labels):
        raise ValueError("need one label per run CSV")
    out = Path(out_dir)
    dat = out / "cases.dat"
    blocks, plots = [], []
    for idx, (path, label) in enumerate(zip(run_csvs, labels)):
        rows = _read_csv(path)
        blocks.append(f"# {label}")
        blocks += [f"{r['day']} {r['cum_cases']}" for r in rows]
        blocks.append("\n")
        plots.append(f"'cases.dat' index {idx} with lines lw 2 title '{label}'")
    dat.write_text("\n".join(blocks))
    gp = out / "cases.gp"
    _script(gp, "Epidemic trajectories", "cumulative cases", "day", plots)
    return [dat, gp]


def emit_methods(sweep_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """Mean R per method with min/max whiskers over seeds."""
    rows = [r for r in _read_csv(sweep_csv) if r["r_defined"] == "1"]
    if not rows:
        raise ValueError(f"no rows with defined R in {sweep_csv}")
    by_method: dict[str, list[float]] = defaultdict(list)
    for r in rows:
        by_method[r["method"]].append(float(r["r"]))
    out = Path(out_dir)
    dat = out / "methods.dat"
    lines = ["# idx method mean lo hi"]
    for i, (method, rs) in enumerate(sorted(by_method.items())):
        mean = sum(rs) / len(rs)
        lines.append(f"{i} {method} {mean:.4f} {min(rs):.4f} {max(rs):.4f}")
    dat.write_text("\n".join(lines) + "\n")
    gp = out / "methods.gp"
    _script(gp, "Method comparison", "R at horizon", "method",
            ["'methods.dat' using 1:3:4:5:xtic(2) with yerrorbars pt 7 notitle"],
            extra="set xrange [-0.5:*]\n")
    return [dat, gp]


def emit_adoption(sweep_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """Mean R vs adoption %, one series per method (adoption sweeps)."""
    rows = [r for r in _read_csv(sweep_csv) if r["r_defined"] == "1"]
    if not rows:
        raise ValueError(f"no rows with defined R in {sweep_csv}")
    acc: dict[tuple[str, float], list[float]] = defaultdict(list)
    for r in rows:
        acc[(r["method"], float(r["grid_value"]))].append(float(r["r"]))
    out = Path(out_dir)
    dat = out / "adoption.dat"
    methods = sorted({m for m, _ in acc})
    blocks, plots = [], []
    for idx, method in enumerate(methods):
        blocks.append(f"# {method}")
        pts = sorted((x, vals) for (m, x), vals in acc.items() if m == method)
        blocks += [f"{x:.2f} {sum(v) / len(v):.4f}" for x, v in pts]
        blocks.append("\n")
        plots.append(f"'adoption.dat' index {idx} with linespoints pt 7 title '{method}'")
    dat.write_text("\n".join(blocks))
    gp = out / "adoption.gp"
    _script(gp, "Adoption sensitivity", "mean R at horizon", "adoption (%)", plots)
    return [dat, gp]

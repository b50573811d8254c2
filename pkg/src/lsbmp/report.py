"""Benchmark reporting: delimited outputs plus SVG convergence figures.

bench.csv holds the raw per-run records and round-trips exactly (floats are
written with repr). summary.csv aggregates best-by-budget curves: a problem
counts as solved at budget b if any budget <= b solved it, and its cost at b
is the best cost achieved so far, which is what the shared-seed prefix runs
deliver natively for the tree planners. Figures are rendered with matplotlib
using fixed hash salt and no date metadata, so re-rendering the same report
is byte-identical.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

BENCH_COLUMNS = ("planner", "budget", "problem_id", "seed", "status", "cost",
                 "wall_ms", "nodes")
_INT_COLS = {"budget", "problem_id", "seed", "nodes"}
_FLOAT_COLS = {"cost", "wall_ms"}

_PLOT_STYLE = {"l2rrt": "tab:blue", "rrt-bestnear": "tab:orange",
               "fmt-star": "tab:green"}


def write_bench_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r[c] if c not in _FLOAT_COLS else repr(float(r[c]))
                        for c in BENCH_COLUMNS])


def read_bench_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != BENCH_COLUMNS:
            raise ValueError(f"unexpected bench.csv columns in {path}")
        for rec in reader:
            row = {}
            for c in BENCH_COLUMNS:
                if c in _INT_COLS:
                    row[c] = int(rec[c])
                elif c in _FLOAT_COLS:
                    row[c] = float(rec[c])
                else:
                    row[c] = rec[c]
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def summarize(rows: list[dict]) -> list[dict]:
    """Best-by-budget summary per (planner, budget), with success and cost
    ratios against fmt-star at the same budget over commonly solved
    problems."""
    planners = sorted({r["planner"] for r in rows})
    budgets = sorted({r["budget"] for r in rows})
    problems = sorted({r["problem_id"] for r in rows})
    # best[planner][problem] as a running minimum over increasing budgets
    best: dict[str, dict[int, float]] = {p: {q: math.inf for q in problems}
                                         for p in planners}
    per_budget: dict[tuple[str, int], dict[int, float]] = {}
    wall: dict[tuple[str, int], list[float]] = {}
    by_key = {(r["planner"], r["budget"], r["problem_id"]): r for r in rows}
    for b in budgets:
        for p in planners:
            for q in problems:
                r = by_key.get((p, b, q))
                if r is not None and r["status"] == "solved":
                    best[p][q] = min(best[p][q], r["cost"])
                wall.setdefault((p, b), []).append(r["wall_ms"] if r else 0.0)
            per_budget[(p, b)] = dict(best[p])
    out = []
    for p in planners:
        for b in budgets:
            solved = {q: c for q, c in per_budget[(p, b)].items() if c < math.inf}
            costs = sorted(solved.values())
            row = {
                "planner": p, "budget": b, "n_problems": len(problems),
                "n_solved": len(solved),
                "success_rate": len(solved) / max(1, len(problems)),
                "cost_q25": _quantile(costs, 0.25),
                "cost_q50": _quantile(costs, 0.50),
                "cost_q75": _quantile(costs, 0.75),
                "mean_wall_ms": float(np.mean(wall[(p, b)])) if wall[(p, b)] else 0.0,
                "norm_success_vs_fmt": "",
                "median_cost_ratio_vs_fmt": "",
            }
            if "fmt-star" in planners and p != "fmt-star":
                fmt_solved = {q: c for q, c in per_budget[("fmt-star", b)].items()
                              if c < math.inf}
                if fmt_solved:
                    row["norm_success_vs_fmt"] = len(solved) / len(fmt_solved)
                common = sorted(set(solved) & set(fmt_solved))
                if common:
                    med_p = _quantile(sorted(solved[q] for q in common), 0.5)
                    med_f = _quantile(sorted(fmt_solved[q] for q in common), 0.5)
                    if med_f and med_f > 0:
                        row["median_cost_ratio_vs_fmt"] = med_p / med_f
            out.append(row)
    return out


def _quantile(sorted_vals, q):
    if not sorted_vals:
        return ""
    return float(np.quantile(np.asarray(sorted_vals), q))


SUMMARY_COLUMNS = ("planner", "budget", "n_problems", "n_solved", "success_rate",
                   "cost_q25", "cost_q50", "cost_q75", "mean_wall_ms",
                   "norm_success_vs_fmt", "median_cost_ratio_vs_fmt")


def write_summary_csv(path, summary_rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in summary_rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c]
                        for c in SUMMARY_COLUMNS])


def write_confusion_csv(path, confusion: dict | None) -> None:
    c = confusion or {"TP": 0, "FP": 0, "TN": 0, "FN": 0}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["", "actual_free", "actual_collision"])
        w.writerow(["predicted_free", c["TP"], c["FP"]])
        w.writerow(["predicted_collision", c["FN"], c["TN"]])


def read_confusion_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {"TP": int(rows[1][1]), "FP": int(rows[1][2]),
            "FN": int(rows[2][1]), "TN": int(rows[2][2])}


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _deterministic_savefig(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_success(summary_rows, path) -> None:
    plt.rcParams["svg.hashsalt"] = "lsbmp"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for planner in sorted({r["planner"] for r in summary_rows}):
        rows = sorted((r for r in summary_rows if r["planner"] == planner),
                      key=lambda r: r["budget"])
        ax.plot([r["budget"] for r in rows], [r["success_rate"] for r in rows],
                marker="o", label=planner,
                color=_PLOT_STYLE.get(planner))
    ax.set_xlabel("sample budget")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _deterministic_savefig(fig, path)


def plot_cost(summary_rows, path) -> None:
    plt.rcParams["svg.hashsalt"] = "lsbmp"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for planner in sorted({r["planner"] for r in summary_rows}):
        rows = sorted((r for r in summary_rows
                       if r["planner"] == planner and r["cost_q50"] != ""),
                      key=lambda r: r["budget"])
        if not rows:
            continue
        budgets = [r["budget"] for r in rows]
        color = _PLOT_STYLE.get(planner)
        ax.plot(budgets, [r["cost_q50"] for r in rows], marker="o",
                label=planner, color=color)
        ax.fill_between(budgets, [r["cost_q25"] for r in rows],
                        [r["cost_q75"] for r in rows], alpha=0.2, color=color)
    ax.set_xlabel("sample budget")
    ax.set_ylabel("trajectory cost (median, IQR)")
    ax.set_xscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _deterministic_savefig(fig, path)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def emit_report(rows: list[dict], out_dir, confusion: dict | None = None) -> list[str]:
    """Write bench.csv, summary.csv, confusion.csv and the two SVG figures.
    Returns the written paths. Pure function of its inputs: re-running on the
    same data produces byte-identical files."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def p(name):
        paths.append(os.path.join(out_dir, name))
        return paths[-1]

    write_bench_csv(p("bench.csv"), rows)
    summary = summarize(rows)
    write_summary_csv(p("summary.csv"), summary)
    write_confusion_csv(p("confusion.csv"), confusion)
    plot_success(summary, p("success_vs_budget.svg"))
    plot_cost(summary, p("cost_vs_budget.svg"))
    return paths


def regenerate_report(out_dir) -> list[str]:
    """Rebuild summary and figures from an existing bench.csv without
    rerunning any planning."""
    rows = read_bench_csv(os.path.join(out_dir, "bench.csv"))
    conf_path = os.path.join(out_dir, "confusion.csv")
    confusion = read_confusion_csv(conf_path) if os.path.exists(conf_path) else None
    return emit_report(rows, out_dir, confusion)

"""Report rendering: delimited summaries plus matplotlib figures for the
per-route success statistics and validator scoring outputs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import RouteStats  # noqa: E402


def write_stats_report(stats: RouteStats, out_dir) -> dict:
    """CSV table and bar chart for per-route success rates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "route_stats.csv"
    fig_path = out_dir / "route_stats.png"

    routes = sorted(stats.per_route)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["paradigm", "attempts", "successes", "success_rate"])
        for name in routes:
            route = stats.per_route[name]
            rate = route["success_rate"]
            writer.writerow([name, route["attempts"], route["successes"],
                             "" if rate is None else f"{rate:.4f}"])
        writer.writerow(["total", stats.total_attempts, stats.total_successes,
                         f"{stats.total_successes / stats.total_attempts:.4f}"
                         if stats.total_attempts else ""])

    rates = [stats.per_route[name]["success_rate"] or 0.0 for name in routes]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(routes, rates, color="#4878b0")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("success rate")
    ax.set_title("Per-route synthesis success")
    for x, rate in enumerate(rates):
        ax.text(x, rate + 0.02, f"{rate:.2f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "figure": fig_path}


def write_score_report(metrics, out_dir) -> dict:
    """CSV table and bar chart for validator benchmark metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "validator_metrics.csv"
    fig_path = out_dir / "validator_metrics.png"

    tp, fp, fn, tn = metrics.confusion
    named = [
        ("accuracy", metrics.accuracy),
        ("precision", metrics.precision),
        ("recall", metrics.recall),
        ("f1", metrics.f1),
    ]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in named:
            writer.writerow([name, f"{value:.4f}"])
        for name, value in (("tp", tp), ("fp", fp), ("fn", fn), ("tn", tn)):
            writer.writerow([name, value])

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([n for n, _ in named], [v for _, v in named], color="#6aa66a")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Validator benchmark metrics")
    for x, (_, value) in enumerate(named):
        ax.text(x, value + 0.02, f"{value:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "figure": fig_path}

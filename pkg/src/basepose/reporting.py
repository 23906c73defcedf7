"""Report serialization and figure rendering.

Every evaluation writes three kinds of artifact side by side: a canonical
JSON report (deterministic, excluded of wall-clock timing), delimited
per-trial and summary records (CSV), and matplotlib figures rendered to
PNG. Timing goes to a separate timing.json so reports stay byte-stable
across reruns.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion (default 95%)."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def save_report(out_dir, report, stem: str = "report") -> None:
    """Write <stem>.json, <stem>_trials.csv, <stem>_timing.json, and a
    success-rate figure for one experiment report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    (out / f"{stem}_timing.json").write_text(
        json.dumps({"wall_clock_s": report.wall_clock_s}, indent=2) + "\n"
    )
    rows = [t.to_dict() for t in report.trials]
    with open(out / f"{stem}_trials.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["index", "seed", "condition", "success", "rejections",
                        "scene_seed", "nav_pose", "chosen_pose"],
        )
        writer.writeheader()
        for row in rows:
            row = dict(row)
            for key in ("nav_pose", "chosen_pose"):
                row[key] = "" if row[key] is None else json.dumps(row[key])
            writer.writerow(row)
    success_figure([report], out / f"{stem}.png")


def success_figure(reports, path, title: str = "Success rate by condition") -> None:
    """Bar chart of success rates with Wilson 95% error bars."""
    labels = [r.condition for r in reports]
    rates = [r.success_rate for r in reports]
    err_lo = [r.success_rate - r.wilson_low for r in reports]
    err_hi = [r.wilson_high - r.success_rate for r in reports]
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(reports), 3.4))
    ax.bar(labels, rates, color="#4878a8", width=0.6)
    ax.errorbar(labels, rates, yerr=[err_lo, err_hi], fmt="none",
                ecolor="#303030", capsize=4)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("success rate")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def summary_rows(reports, extra: dict | None = None) -> list[dict]:
    rows = []
    for r in reports:
        row = {
            "condition": r.condition,
            "n_trials": r.n_trials,
            "successes": r.successes,
            "success_rate": round(r.success_rate, 6),
            "wilson_low": round(r.wilson_low, 6),
            "wilson_high": round(r.wilson_high, 6),
        }
        if extra:
            row.update(extra)
        rows.append(row)
    return rows


def write_summary_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    fieldnames = list(rows[0].keys())
    for row in rows[1:]:
        for key in row:
            if key not in fieldnames:
                fieldnames.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def summary_table(rows: list[dict]) -> str:
    """Human-readable aligned table of summary rows."""
    if not rows:
        return "(empty)\n"
    fields = list(rows[0].keys())
    cells = [[str(r.get(f, "")) for f in fields] for r in rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) for i, f in enumerate(fields)]
    lines = [
        "  ".join(f.ljust(w) for f, w in zip(fields, widths)),
        "  ".join("-" * w for w in widths),
    ]
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
    return "\n".join(lines) + "\n"


def training_curves(history, path) -> None:
    """Loss components over training steps, validation NLL overlaid."""
    steps = [row["step"] for row in history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].plot(steps, [row["nll"] for row in history], lw=0.8, label="nll")
    axes[0].plot(steps, [row["total"] for row in history], lw=0.8, label="total")
    val = [(row["step"], row["val_nll"]) for row in history if "val_nll" in row]
    if val:
        axes[0].plot([v[0] for v in val], [v[1] for v in val], "o-", ms=3,
                     label="val nll (mean)")
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("batch loss")
    axes[0].legend(fontsize=8)
    for key in ("h_w", "d_inter", "h_mode"):
        axes[1].plot(steps, [row[key] for row in history], lw=0.8, label=key)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("regularizer value")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def data_efficiency_figure(counts, rates, path, baselines: dict | None = None) -> None:
    """Success rate versus number of collected rollouts."""
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.plot(counts, rates, "o-", color="#4878a8", label="learned")
    if baselines:
        for name, value in baselines.items():
            ax.axhline(value, ls="--", lw=1.0, label=name)
    ax.set_xlabel("successful rollouts")
    ax.set_ylabel("success rate")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def saliency_figure(cloud, scores, path) -> None:
    """Top-down scatter of the observation colored by saliency score."""
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    sc = ax.scatter(cloud.positions[:, 0], cloud.positions[:, 1], c=scores,
                    s=2.0, cmap="viridis", vmin=-1.0, vmax=1.0)
    fig.colorbar(sc, ax=ax, label="feature alignment")
    ax.set_aspect("equal")
    ax.set_xlabel("x forward (m)")
    ax.set_ylabel("y left (m)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def latency_figure(samples_ms, path) -> None:
    """Histogram of forward+selection latency samples."""
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.hist(samples_ms, bins=30, color="#4878a8")
    ax.set_xlabel("latency (ms)")
    ax.set_ylabel("runs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

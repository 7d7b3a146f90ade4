"""Delimited/JSON output and figure rendering for the CLI.

CSV cells are written with repr-precision floats so identical runs
produce byte-identical files.  Figures are rendered headlessly and
saved next to the data they plot.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_cell(row[name]) for name in fieldnames])


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_run_figure(record, path: Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(record.m, record.val_loss, lw=1.5)
    axes[0].set_xlabel("inner-optimization m")
    axes[0].set_ylabel("validation loss")
    axes[0].set_title(f"{record.strategy} (seed {record.seed})")
    axes[1].plot(record.m, record.hypergrad_norm, lw=1.5, color="tab:orange")
    axes[1].set_xlabel("inner-optimization m")
    axes[1].set_ylabel("mean hypergradient norm")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_cossim_figure(rows: list[dict], path: Path) -> None:
    labels = sorted({r["strategy"] for r in rows})
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    for label in labels:
        ts = [r["t"] for r in rows if r["strategy"] == label]
        for ax, field in zip(axes, ("cosine_total", "cosine_so")):
            vals = [r[field] for r in rows if r["strategy"] == label]
            ax.plot(ts, vals, lw=1.4, label=label)
    axes[0].set_title("cosine to exact reverse-mode (total)")
    axes[1].set_title("cosine to exact reverse-mode (second-order)")
    for ax in axes:
        ax.set_xlabel("inner step t")
        ax.set_ylim(-1.05, 1.05)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_estimator_figure(sample_rows: list[dict], theta_rows: list[dict], path: Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    events = sorted({r["event"] for r in sample_rows})
    for ev in events:
        xs = [r["x"] for r in sample_rows if r["event"] == ev]
        ys = [r["y"] for r in sample_rows if r["event"] == ev]
        axes[0].scatter(xs, ys, s=12, alpha=0.7, label=f"event {ev}")
    axes[0].set_xlabel("x_s = ||v_s|| (1-g^s)/(1-g)")
    axes[0].set_ylabel("y_s = sigma(v_s) . g_s_so")
    axes[0].set_title("size-estimator regression scatter")
    if events:
        axes[0].legend(fontsize=7)
    if theta_rows:
        axes[1].plot([r["m"] for r in theta_rows], [r["theta"] for r in theta_rows], "o-", lw=1.4)
    axes[1].set_xlabel("inner-optimization m")
    axes[1].set_ylabel("fitted theta")
    axes[1].set_title("theta history")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_gamma_figure(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for gamma in sorted({r["gamma"] for r in rows}):
        ms = [r["m"] for r in rows if r["gamma"] == gamma]
        vals = [r["val_loss"] for r in rows if r["gamma"] == gamma]
        ax.plot(ms, vals, lw=1.4, label=f"gamma={gamma}")
    ax.set_xlabel("inner-optimization m")
    ax.set_ylabel("validation loss")
    ax.set_title("gamma sweep (theta fixed at 1)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_bench_figure(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.8))
    xs = [r["jvps_per_inner_opt"] for r in rows]
    ys = [r["metric_mean"] for r in rows]
    errs = [r["metric_ci95"] for r in rows]
    ax.errorbar(xs, ys, yerr=errs, fmt="o", capsize=3)
    for r in rows:
        ax.annotate(r["strategy"], (r["jvps_per_inner_opt"], r["metric_mean"]),
                    textcoords="offset points", xytext=(5, 4), fontsize=8)
    ax.set_xlabel("JVPs per inner-optimization (per task)")
    ax.set_ylabel("terminal validation loss")
    ax.set_title("cost/quality trade-off")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

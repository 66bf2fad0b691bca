"""Output writers: JSON reports, CSV summaries, and rendered figures.

Files are written deterministically: keys sorted, wall times excluded, and
figure PNGs rendered off-screen with fixed metadata, so a run repeated with
the same configuration and seed is byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .reports import EstimateReport

_PNG_META = {"Software": f"spinemc {__version__}"}


def envelope(config_hash: str, seed: int, **extra) -> dict:
    """Common header embedded in every report file."""
    out = {
        "toolkit": "spinemc",
        "version": __version__,
        "config_sha256": config_hash,
        "seed": seed,
    }
    out.update(extra)
    return out


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def write_csv(path: str, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def save_figure(fig, path: str) -> None:
    fig.savefig(path, dpi=120, format="png", metadata=dict(_PNG_META))
    plt.close(fig)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def figure_estimates(reports: list[EstimateReport], reference: float | None = None,
                     title: str = "estimates"):
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(reports) + 2), 4.0))
    xs = np.arange(len(reports))
    means = [r.estimate for r in reports]
    errs = [[r.estimate - r.ci99[0] for r in reports], [r.ci99[1] - r.estimate for r in reports]]
    ax.errorbar(xs, means, yerr=errs, fmt="o", capsize=4, label="estimate (99% CI)")
    if reference is not None:
        ax.axhline(reference, color="crimson", lw=1, ls="--", label=f"reference {reference:.6g}")
    ax.set_xticks(xs)
    ax.set_xticklabels([r.name for r in reports], rotation=30, ha="right", fontsize=8)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def figure_bounds(rows: list[dict], title: str = "sandwich bounds"):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    t_values = sorted({row["t"] for row in rows})
    for t in t_values:
        sel = sorted((r for r in rows if r["t"] == t), key=lambda r: r["x"])
        xs = [r["x"] for r in sel]
        ax.plot(xs, [r["lower_bound"] for r in sel], "v--", label=f"lower, t={t}")
        ax.errorbar(
            xs, [r["estimate"] for r in sel],
            yerr=[3 * r["std_error"] for r in sel], fmt="o-", label=f"simulated, t={t}",
        )
        ax.plot(xs, [r["upper_bound_capped"] for r in sel], "^--", label=f"upper (cap 1), t={t}")
    ax.set_xlabel("level x")
    ax.set_ylabel("P(some particle above x)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def figure_split_times(samples: np.ndarray, rate: float = 2.0,
                       title: str = "split-time law"):
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.hist(samples, bins=60, density=True, alpha=0.6, label="simulated split times")
    grid = np.linspace(0.0, float(np.max(samples)) if samples.size else 1.0, 200)
    ax.plot(grid, rate * np.exp(-rate * grid), "r-", lw=1.5, label=f"Exp({rate:g}) density")
    ax.set_xlabel("first split time")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(fontsize=9)
    fig.tight_layout()
    return fig


def figure_grid_diffs(case_rows: list[dict], tolerance: float,
                      title: str = "exact identity gap per grid case"):
    fig, ax = plt.subplots(figsize=(7.5, 4.0))
    diffs = []
    for row in case_rows:
        rel = row["abs_diff"] / (1.0 + abs(row["lhs"])) if not row["skipped"] else math.nan
        diffs.append(max(rel, 1e-18) if not math.isnan(rel) else math.nan)
    xs = np.arange(len(diffs))
    ax.semilogy(xs, diffs, ".", ms=4, label="relative gap")
    ax.axhline(tolerance, color="crimson", ls="--", lw=1, label=f"tolerance {tolerance:g}")
    ax.set_xlabel("grid case")
    ax.set_ylabel("|lhs - rhs| / (1 + |lhs|)")
    ax.set_title(title)
    ax.legend(fontsize=9)
    fig.tight_layout()
    return fig

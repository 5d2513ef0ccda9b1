"""Report rendering: delimited outputs plus matplotlib figures.

Every report path writes the machine-readable artifact (CSV or JSON) and,
next to it, a PNG rendering of the same data.  Pure-metric code lives in
``evaluation``; this module only serializes and draws.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .baselines import PairwiseTable  # noqa: E402
from .evaluation import MetricsReport  # noqa: E402


def write_json(obj: dict, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)
        fp.write("\n")


def write_loss_trace(losses: Sequence[float], steps: Sequence[float], path: Path) -> None:
    """CSV with one row per epoch: epoch, loss, step_size (blank at init)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "loss", "step_size"])
        writer.writerow([0, repr(float(losses[0])), ""])
        for epoch, loss in enumerate(losses[1:], start=1):
            writer.writerow([epoch, repr(float(loss)), repr(float(steps[epoch - 1]))])


def render_loss_curve(losses: Sequence[float], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(len(losses)), losses, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_pairwise_table(table: PairwiseTable, path: Path) -> None:
    """CSV rows: u, v, probability, successes, attempts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["u", "v", "probability", "successes", "attempts"])
        for (u, v) in sorted(table.probs, key=lambda e: (str(e[0]), str(e[1]))):
            succ, att = table.trials.get((u, v), (0, 0))
            writer.writerow([u, v, repr(float(table.probs[(u, v)])), succ, att])


def read_pairwise_table(path: Path) -> PairwiseTable:
    table = PairwiseTable()
    nodes = set()
    with Path(path).open(newline="") as fp:
        for row in csv.DictReader(fp):
            pair = (row["u"], row["v"])
            table.probs[pair] = float(row["probability"])
            table.trials[pair] = (int(row["successes"]), int(row["attempts"]))
            nodes.update(pair)
    table.nodes = sorted(nodes)
    return table


def write_kl_dump(rows: Sequence[dict], path: Path) -> None:
    """Per-pair dump: v, mode, p_true, q, kl, bucket."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["v", "mode", "p_true", "q", "kl", "bucket"])
        for row in rows:
            writer.writerow([row["v"], "|".join(str(u) for u in row["mode"]),
                             repr(float(row["p_true"])), repr(float(row["q"])),
                             repr(float(row["kl"])), row["bucket"]])


def write_histogram(counts: np.ndarray, path: Path) -> None:
    """CSV rows: x_bin, y_bin, count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["x_bin", "y_bin", "count"])
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                writer.writerow([i, j, int(counts[i, j])])


def render_histogram(counts: np.ndarray, x_edges: np.ndarray,
                     y_edges: np.ndarray, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    mesh = ax.pcolormesh(x_edges, y_edges, counts.T, cmap="hot")
    ax.set_xlabel("influence")
    ax.set_ylabel("susceptibility")
    ax.set_title("influence vs susceptibility")
    fig.colorbar(mesh, ax=ax, label="nodes")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


_COMPARISON_FIELDS = ["method", "mkl", "mkl_observed", "mkl_hidden", "compositive",
                      "mrr", "r_mrr", "n_observed", "n_hidden", "n_rank_cases",
                      "n_skipped_pairs"]


def write_comparison(reports: Sequence[MetricsReport], path: Path) -> None:
    """Method comparison CSV, ordered by compositive score ascending."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(reports, key=lambda r: r.compositive)
    with path.open("w", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=_COMPARISON_FIELDS)
        writer.writeheader()
        for rep in ordered:
            row = rep.to_dict()
            writer.writerow({k: row[k] for k in _COMPARISON_FIELDS})


def render_comparison(reports: Sequence[MetricsReport], path: Path) -> None:
    """Bar chart of per-method MKL buckets on a log scale."""
    ordered = sorted(reports, key=lambda r: r.compositive)
    names = [r.method for r in ordered]
    obs = [max(r.mkl_observed, 1e-12) for r in ordered]
    hid = [max(r.mkl_hidden, 1e-12) for r in ordered]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(names) + 2), 3.8))
    ax.bar(x - 0.2, obs, width=0.4, label="observed")
    ax.bar(x + 0.2, hid, width=0.4, label="hidden")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("mean KL")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

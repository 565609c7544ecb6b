"""Figures written next to the metrics log and evaluation reports."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_metrics(path) -> tuple[dict, list[dict]]:
    """Return (config header, episode records) from a metrics log."""
    config, records = {}, []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "config" in rec:
                config = rec["config"]
            else:
                records.append(rec)
    return config, records


def smooth(values: Sequence[float], window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    window = max(1, min(window, len(values)))
    kernel = np.ones(window) / window
    # edge padding keeps the output as long as the input
    padded = np.pad(values, (window // 2, window - 1 - window // 2), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def plot_training(records: Sequence[dict], out_path, window: int = 50):
    """Losses, episode accuracy and support dispersion against episode index."""
    ep = np.array([r["episode"] for r in records])
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    ax = axes[0]
    ax.plot(ep, smooth([r["l_sup"] for r in records], window), label=r"$L_{sup}$")
    ax.plot(ep, smooth([r["l_match"] for r in records], window), label=r"$L_{match}$")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    axes[1].plot(ep, smooth([r["accuracy"] for r in records], window), color="C2")
    axes[1].set_ylabel("query accuracy")
    axes[1].set_ylim(0, 1.02)
    axes[2].plot(ep, smooth([r["dispersion"] for r in records], window), color="C3")
    axes[2].set_ylabel("support dispersion")
    axes[2].set_xlabel("episode")

    phases = np.array([r["phase"] for r in records])
    enriched = ep[phases == 2]
    if enriched.size:
        for ax in axes:
            ax.axvspan(enriched.min(), enriched.max(), color="0.9", zorder=0)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_eval(accuracies: Sequence[float], out_path, title: str = ""):
    """Histogram of per-task accuracy with the mean marked."""
    acc = np.asarray(accuracies)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(acc, bins=np.linspace(0, 1, 21), color="C0", alpha=0.8)
    ax.axvline(acc.mean(), color="k", ls="--", label=f"mean {acc.mean():.3f}")
    ax.set_xlabel("task accuracy")
    ax.set_ylabel("tasks")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path

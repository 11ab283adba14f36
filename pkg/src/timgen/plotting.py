"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .providers import MODALITIES  # noqa: E402


def plot_loss_curves(history, path) -> Path:
    """Per-epoch total, VAE, score and class losses on a log scale."""
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    for attr, label in (("total", "total"), ("vae", "vae"), ("score", "score"), ("cls", "class")):
        ax.plot(epochs, [getattr(h, attr) for h in history], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss per example")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_alpha(metrics: Mapping[str, float], path) -> Path:
    """Mean modality weights, grouped by true class when those metrics exist."""
    groups: dict[str, Sequence[float]] = {"all": [metrics[f"alpha_{m}"] for m in MODALITIES]}
    classes = sorted({int(k[len("alpha_class"):].split("_")[0]) for k in metrics if k.startswith("alpha_class")})
    for c in classes:
        groups[f"class {c}"] = [metrics[f"alpha_class{c}_{m}"] for m in MODALITIES]
    x = np.arange(len(groups))
    width = 0.8 / len(MODALITIES)
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(groups), 4))
    for j, m in enumerate(MODALITIES):
        ax.bar(x + (j - 1.5) * width, [v[j] for v in groups.values()], width, label=m)
    ax.axhline(1.0 / len(MODALITIES), color="grey", linestyle="--", linewidth=1)
    ax.set_xticks(x)
    ax.set_xticklabels(list(groups))
    ax.set_ylabel("mean alpha")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)

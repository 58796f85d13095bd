"""PNG figures written next to the CSV/JSONL outputs of a run."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path, config_hash: str) -> None:
    # drop the version string so identical runs give identical files
    fig.savefig(path, dpi=100, metadata={"Software": None, "Description": f"config_hash {config_hash}"})
    plt.close(fig)


def plot_state_occupation(states, p_exact, path, config_hash: str) -> None:
    states = np.asarray(states)
    counts = np.bincount(states, minlength=len(p_exact)) / max(states.size, 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    idx = np.arange(len(p_exact))
    ax.bar(idx - 0.2, counts, width=0.4, label="chain")
    ax.bar(idx + 0.2, p_exact, width=0.4, label="thermal")
    ax.set_xlabel("state")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path), config_hash)


def plot_halting(n, analytic, empirical, se, path, config_hash: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(n, analytic, "k-", label="quadrature")
    if empirical is not None:
        ok = np.asarray(empirical) > 0
        ax.errorbar(np.asarray(n)[ok], np.asarray(empirical)[ok], yerr=np.asarray(se)[ok] * 4,
                    fmt="o", ms=3, label="simulation (4 SE)")
    ax.set_xlabel("loop iteration n")
    ax.set_ylabel("halting probability")
    ax.legend()
    fig.tight_layout()
    _save(fig, Path(path), config_hash)


def plot_loop_lengths(lengths, n_max: int, path, config_hash: str) -> None:
    lengths = np.asarray(lengths)
    counts = np.bincount(lengths, minlength=n_max + 1)[1:] / max(lengths.size, 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(np.arange(1, n_max + 1), counts)
    ax.set_yscale("log")
    ax.set_xlabel("loop iterations per update")
    ax.set_ylabel("frequency")
    fig.tight_layout()
    _save(fig, Path(path), config_hash)

"""Matplotlib renderings of the delimited outputs (training curves,
throughput bars, schedule timelines).  The CSVs stay the interchange format;
these are the human-friendly views written next to them."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .costs import ScheduleEvent
from .harness import ComparisonReport, MetricsRecord

_KIND_COLORS = {
    "forward": "#1f77b4",
    "aux_forward": "#9edae5",
    "backward": "#ff7f0e",
    "update": "#2ca02c",
    "comm": "#7f7f7f",
}


def save_training_curves(records: Sequence[MetricsRecord], path: str | Path) -> None:
    """Loss and test accuracy per epoch, one line per mode."""
    modes = sorted({r.mode for r in records})
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for mode in modes:
        rows = sorted((r for r in records if r.mode == mode), key=lambda r: r.epoch)
        epochs = [r.epoch for r in rows]
        ax_loss.plot(epochs, [r.mean_loss for r in rows], label=mode)
        ax_acc.plot(epochs, [r.test_acc for r in rows], label=mode)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("final-stage mean loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("test accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    for ax in (ax_loss, ax_acc):
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_throughput_bars(report: ComparisonReport, path: str | Path) -> None:
    """Measured batches/sec per mode with the analytic prediction in the title."""
    modes = [s.mode for s in report.summaries]
    values = [s.batches_per_sec for s in report.summaries]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(modes, values, color="#1f77b4")
    ax.set_ylabel("batches per second")
    ax.set_title(f"throughput by mode  (analytic (k+1)/s = {report.analytic_ratio:.4f})")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_gantt(events: Sequence[ScheduleEvent], path: str | Path,
               title: str = "") -> None:
    """Timeline of simulated phases, one lane per stage."""
    stages = sorted({e.stage for e in events})
    fig, ax = plt.subplots(figsize=(10, 1.0 + 0.6 * len(stages)))
    for e in events:
        if e.end <= e.start:
            continue  # zero-length phases have nothing to draw
        ax.broken_barh([(e.start, e.end - e.start)], (e.stage - 0.4, 0.8),
                       facecolors=_KIND_COLORS.get(e.kind, "#333333"))
    ax.set_yticks(stages)
    ax.set_yticklabels([f"stage {j}" for j in stages])
    ax.invert_yaxis()
    ax.set_xlabel("time")
    if title:
        ax.set_title(title)
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in _KIND_COLORS.values()]
    ax.legend(handles, list(_KIND_COLORS), loc="upper right", fontsize="small")
    ax.grid(True, axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_batch_time_bars(rows: Sequence[tuple[str, float, float]],
                         path: str | Path) -> None:
    """Analytic vs simulated steady batch time per mode.

    ``rows`` holds (mode, analytic_batch_time, simulated_steady_time).
    """
    modes = [r[0] for r in rows]
    analytic = [r[1] for r in rows]
    simulated = [r[2] for r in rows]
    x = range(len(modes))
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.38
    ax.bar([i - width / 2 for i in x], analytic, width, label="analytic")
    ax.bar([i + width / 2 for i in x], simulated, width, label="simulated steady")
    ax.set_xticks(list(x))
    ax.set_xticklabels(modes)
    ax.set_ylabel("batch time")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

"""Experiment driver: trains every requested mode on one dataset and emits
comparable metrics.

All modes within one run start from bit-identical parameters (same seed,
modules rebuilt per mode) and consume batches in the same order (shuffle
seeded by ``seed + epoch``), so accuracy differences reflect the training
discipline rather than initialisation luck.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .blocks import (
    Hyperparams,
    LocalModule,
    NetworkSpec,
    aux_forward,
    block_forward,
    build_modules,
    memory_footprint,
    partition,
)
from .config import ExperimentConfig
from .data import Dataset, batches, gen_blobs, gen_spirals, load_idx
from .errors import ConfigMismatch, InvalidValue, IoError
from .runtime import (
    EpochMetrics,
    RunConfig,
    RunMode,
    run_deterministic,
    run_epoch,
    throughput,
)
from .tensor import GradTape, Tensor

CSV_HEADER = ("mode,epoch,batches_per_sec,mean_loss,train_acc,test_acc,"
              "params_max_stage,activations_max_stage,mean_staleness")


@dataclass(frozen=True)
class MetricsRecord:
    """One epoch of one mode, as it appears in the metrics CSV."""

    mode: str
    epoch: int
    batches_per_sec: float
    mean_loss: float
    train_acc: float
    test_acc: float
    params_max_stage: int
    activations_max_stage: int
    mean_staleness: float


@dataclass(frozen=True)
class ModeSummary:
    """Final-epoch numbers for one mode (all of them CSV values)."""

    mode: str
    batches_per_sec: float
    test_acc: float
    params_max_stage: int
    activations_max_stage: int


@dataclass(frozen=True)
class ComparisonReport:
    stages: int
    measured_k: float
    analytic_ratio: float          # (k + 1) / s from the measured k
    summaries: tuple[ModeSummary, ...]
    ppll_over_pp_throughput: float | None


def make_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train and test datasets for the config.

    Synthetic generators reuse the config seed for training data and
    ``seed + 1`` for test data.  For IDX input the test pair is optional;
    without it the training set doubles as the evaluation set.
    """
    if cfg.dataset == "blobs":
        train = gen_blobs(cfg.n_per_class, cfg.classes, cfg.dim, cfg.spread, cfg.seed)
        test = gen_blobs(cfg.n_per_class, cfg.classes, cfg.dim, cfg.spread, cfg.seed + 1)
    elif cfg.dataset == "spirals":
        train = gen_spirals(cfg.n_per_class, cfg.noise, cfg.seed)
        test = gen_spirals(cfg.n_per_class, cfg.noise, cfg.seed + 1)
    elif cfg.dataset == "idx":
        train = load_idx(cfg.idx_train_images, cfg.idx_train_labels)
        if cfg.idx_test_images and cfg.idx_test_labels:
            test = load_idx(cfg.idx_test_images, cfg.idx_test_labels)
        else:
            test = train
    else:
        raise InvalidValue(f"unknown dataset kind {cfg.dataset!r}")
    if train.dim != cfg.layer_dims[0]:
        raise ConfigMismatch(
            f"dataset dim {train.dim} != layer_dims[0] {cfg.layer_dims[0]}")
    if train.num_classes != cfg.layer_dims[-1]:
        raise ConfigMismatch(
            f"dataset has {train.num_classes} classes but layer_dims ends "
            f"in {cfg.layer_dims[-1]}")
    return train, test


def build_pipeline(cfg: ExperimentConfig, steps_per_epoch: int) -> list[LocalModule]:
    """Fresh modules for one mode: same config, same seed, same init."""
    spec = NetworkSpec(cfg.layer_dims)
    plan = partition(spec, cfg.stages)
    hyper = Hyperparams(
        lr0=cfg.lr0, lr_min=cfg.lr_min, total_steps=cfg.epochs * steps_per_epoch,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay, seed=cfg.seed,
        aux_hidden_width=cfg.aux_hidden_width,
    )
    return build_modules(spec, plan, cfg.aux_depth_max, cfg.aux_depth_interval, hyper)


def evaluate(modules: Sequence[LocalModule], dataset: Dataset,
             chunk: int = 512) -> float:
    """Accuracy of the composed network (the final stage's true task head)."""
    correct = 0
    for start in range(0, dataset.n, chunk):
        h = Tensor(dataset.features[start:start + chunk])
        for m in modules:
            h = block_forward(m, h)
        pred = h.data.argmax(axis=1)
        correct += int((pred == dataset.labels[start:start + chunk]).sum())
    return correct / dataset.n


def estimate_k(cfg: ExperimentConfig, train: Dataset, trials: int = 3) -> float:
    """Measured aux/block cost ratio of the first stage.

    Uses forward time as the cost proxy (the idealised model assumes the aux
    head scales every phase by the same factor).  Throwaway modules keep the
    measurement from touching training state.
    """
    steps = max(1, -(-train.n // cfg.batch_size))
    modules = build_pipeline(cfg, steps)
    x = Tensor(train.features[:min(train.n, cfg.batch_size)])
    first = modules[0]
    f = f_a = 0.0
    for _ in range(trials):
        with GradTape():
            t0 = time.perf_counter()
            h = block_forward(first, x)
            t1 = time.perf_counter()
            aux_forward(first, h)
            t2 = time.perf_counter()
        f += t1 - t0
        f_a += t2 - t1
    return f_a / f if f > 0 else 0.0


def _epoch_record(cfg: ExperimentConfig, mode: RunMode, epoch: int,
                  metrics: EpochMetrics, modules: Sequence[LocalModule],
                  train: Dataset, test: Dataset) -> MetricsRecord:
    footprints = [memory_footprint(m, cfg.batch_size) for m in modules]
    return MetricsRecord(
        mode=mode.value,
        epoch=epoch,
        batches_per_sec=throughput(metrics, metrics.n_batches),
        mean_loss=metrics.final_stage_mean_loss,
        train_acc=evaluate(modules, train),
        test_acc=evaluate(modules, test),
        params_max_stage=max(fp.params for fp in footprints),
        activations_max_stage=max(fp.activations for fp in footprints),
        mean_staleness=metrics.mean_staleness,
    )


def run_experiment(cfg: ExperimentConfig, deterministic: bool = False,
                   out_dir: str | Path | None = None,
                   ) -> tuple[list[MetricsRecord], ComparisonReport]:
    """Train every mode in ``cfg.modes`` and build the comparison report.

    If a run fails part-way and ``out_dir`` is given, the records collected
    so far are flushed to ``metrics.csv`` before the error propagates.
    """
    train, test = make_datasets(cfg)
    steps_per_epoch = max(1, -(-train.n // cfg.batch_size))
    run_cfg = RunConfig(buffer_capacity=cfg.buffer_capacity,
                        sleep_padding=cfg.sleep_padding,
                        comm_padding=cfg.comm_padding)
    runner = run_deterministic if deterministic else run_epoch

    records: list[MetricsRecord] = []
    try:
        for mode in cfg.modes:
            modules = build_pipeline(cfg, steps_per_epoch)
            for epoch in range(cfg.epochs):
                it = batches(train, cfg.batch_size, shuffle=True, seed=cfg.seed + epoch)
                metrics = runner(mode, modules, it, run_cfg)
                records.append(_epoch_record(cfg, mode, epoch, metrics, modules,
                                             train, test))
    except Exception:
        if out_dir is not None and records:
            write_metrics_csv(records, Path(out_dir) / "metrics.csv")
        raise

    k = estimate_k(cfg, train)
    report = _build_report(cfg, records, k)
    return records, report


def _build_report(cfg: ExperimentConfig, records: Sequence[MetricsRecord],
                  k: float) -> ComparisonReport:
    summaries = []
    final: dict[str, MetricsRecord] = {}
    for mode in cfg.modes:
        mode_records = [r for r in records if r.mode == mode.value]
        last = mode_records[-1]
        final[mode.value] = last
        summaries.append(ModeSummary(
            mode=last.mode,
            batches_per_sec=last.batches_per_sec,
            test_acc=last.test_acc,
            params_max_stage=last.params_max_stage,
            activations_max_stage=last.activations_max_stage,
        ))
    ratio = None
    if RunMode.PPLL.value in final and RunMode.NAIVE_PP.value in final:
        pp = final[RunMode.NAIVE_PP.value].batches_per_sec
        if pp > 0:
            ratio = final[RunMode.PPLL.value].batches_per_sec / pp
    return ComparisonReport(
        stages=cfg.stages,
        measured_k=k,
        analytic_ratio=(k + 1.0) / cfg.stages,
        summaries=tuple(summaries),
        ppll_over_pp_throughput=ratio,
    )


def write_metrics_csv(records: Sequence[MetricsRecord], path: str | Path) -> None:
    """Write the metrics CSV (fixed 6-decimal floats, rows by mode then epoch)."""
    if not records:
        raise InvalidValue("no records to write")
    rows = sorted(records, key=lambda r: (r.mode, r.epoch))
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.mode},{r.epoch},{r.batches_per_sec:.6f},{r.mean_loss:.6f},"
            f"{r.train_acc:.6f},{r.test_acc:.6f},{r.params_max_stage},"
            f"{r.activations_max_stage},{r.mean_staleness:.6f}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"could not write {path}: {exc}") from exc


def report_table(report: ComparisonReport) -> str:
    """Aligned text table, one row per mode, plus the analytic prediction.

    Every number in the body also appears in the metrics CSV (same rounding):
    each row is the mode's final epoch.
    """
    header = ("mode", "batches_per_sec", "test_acc", "params_max_stage",
              "activations_max_stage")
    rows = [header]
    for s in report.summaries:
        rows.append((s.mode, f"{s.batches_per_sec:.6f}", f"{s.test_acc:.6f}",
                     str(s.params_max_stage), str(s.activations_max_stage)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.append(f"analytic (k+1)/s = {report.analytic_ratio:.6f}")
    return "\n".join(lines) + "\n"

"""Threaded pipeline execution of gradient-isolated stages.

One worker thread per stage plus one source thread; neighbours communicate
through bounded FIFO buffers.  Three disciplines share the loop:

* ``E2E``      — no threads: one tape spans every block, one global backward.
* ``NAIVE_PP`` — stage workers forward in a chain, then wait for the boundary
  gradient to come back from downstream before updating (synchronised
  backward; the first stage therefore serialises batches).
* ``PPLL``     — each worker pops, forwards, pushes the detached output, and
  immediately trains on its local loss; it never waits for downstream except
  for buffer backpressure.

Because every buffer is FIFO with a single producer and consumer, each
stage consumes batches in order and its parameter trajectory is independent
of thread timing — ``run_deterministic`` replays the same dataflow on one
thread (round-robin over stages) and produces bit-identical losses.
"""
from __future__ import annotations

import queue
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .blocks import LocalModule, aux_forward, block_forward
from .errors import ConfigMismatch, PushAfterClose, WorkerPanic, ZeroDuration
from .optim import cosine_lr, sgd_nesterov_step
from .tensor import GradTape, Tensor, backward, backward_from, softmax_xent


class RunMode(Enum):
    E2E = "E2E"
    NAIVE_PP = "NaivePP"
    PPLL = "PPLL"


class _EndOfStream:
    def __repr__(self) -> str:
        return "EndOfStream"


#: Sentinel returned by pop() once a buffer is closed and drained.
END_OF_STREAM = _EndOfStream()


@dataclass
class BufferSlot:
    """One batch travelling between stages: id, detached features, labels."""

    batch_id: int
    features: Tensor
    labels: np.ndarray

    def __post_init__(self):
        if self.features.track_grad:
            raise ValueError("buffer slots must carry detached tensors")
        if self.features.data.ndim != 2 or self.features.shape[0] != len(self.labels):
            raise ValueError(
                f"features {self.features.shape} do not match {len(self.labels)} labels")


class StageBuffer:
    """Bounded blocking FIFO for single-producer / single-consumer use.

    ``push`` blocks while full (backpressure), ``pop`` blocks while empty and
    open, and returns END_OF_STREAM once the buffer is closed and drained.
    ``producer_progress`` is the batch id the producer most recently started
    working on; the consumer reads it at pop time to measure staleness.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque = deque()
        self._cv = threading.Condition()
        self._closed = False
        self.high_water = 0
        self.producer_progress = -1
        self.total_pushed = 0

    def push(self, slot: BufferSlot) -> None:
        with self._cv:
            if self._closed:
                raise PushAfterClose("push on closed buffer")
            while len(self._items) >= self.capacity:
                self._cv.wait()
                if self._closed:
                    raise PushAfterClose("buffer closed while waiting to push")
            self._items.append(slot)
            self.total_pushed += 1
            if len(self._items) > self.high_water:
                self.high_water = len(self._items)
            self._cv.notify_all()

    def pop(self):
        with self._cv:
            while not self._items and not self._closed:
                self._cv.wait()
            if self._items:
                slot = self._items.popleft()
                self._cv.notify_all()
                return slot
            return END_OF_STREAM

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()

    @property
    def occupancy(self) -> int:
        with self._cv:
            return len(self._items)


@dataclass
class RunConfig:
    """Knobs for one epoch run.

    ``sleep_padding`` emulates heavier per-stage compute: each phase (forward,
    backward, update) of stage j sleeps ``pad_for(j)`` seconds.  A scalar pads
    every stage equally; a sequence pads per stage.  ``comm_padding`` is slept
    by the producer before each inter-stage push.
    """

    buffer_capacity: int = 2
    sleep_padding: float | Sequence[float] = 0.0
    comm_padding: float = 0.0

    def pad_for(self, stage: int) -> float:
        if isinstance(self.sleep_padding, (int, float)):
            return float(self.sleep_padding)
        pads = self.sleep_padding
        return float(pads[stage]) if stage < len(pads) else float(pads[-1])


@dataclass
class EpochMetrics:
    """What one epoch did: counts, timings, losses, staleness.

    ``wall_time`` and ``busy_time`` are in seconds for threaded runs and in
    scheduler steps (virtual time) for deterministic runs, so deterministic
    metrics are bit-reproducible.
    """

    n_stages: int
    n_batches: int = 0
    wall_time: float = 0.0
    batches_processed: list[int] = field(default_factory=list)
    busy_time: list[float] = field(default_factory=list)
    loss_history: list[list[float]] = field(default_factory=list)
    staleness: Counter = field(default_factory=Counter)
    buffer_high_water: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.batches_processed:
            self.batches_processed = [0] * self.n_stages
        if not self.busy_time:
            self.busy_time = [0.0] * self.n_stages
        if not self.loss_history:
            self.loss_history = [[] for _ in range(self.n_stages)]

    def mean_loss(self, stage: int) -> float:
        hist = self.loss_history[stage]
        return float(sum(hist) / len(hist)) if hist else float("nan")

    @property
    def final_stage_mean_loss(self) -> float:
        return self.mean_loss(self.n_stages - 1)

    @property
    def mean_staleness(self) -> float:
        total = sum(self.staleness.values())
        if total == 0:
            return 0.0
        return sum(k * v for k, v in self.staleness.items()) / total


def throughput(metrics: EpochMetrics, n_batches: int) -> float:
    """Batches per second (or per virtual step for deterministic runs)."""
    if metrics.wall_time <= 0.0:
        raise ZeroDuration("epoch wall time is not positive")
    return n_batches / metrics.wall_time


def _validate_modules(modules: Sequence[LocalModule]) -> None:
    if not modules:
        raise ConfigMismatch("no modules to run")
    for j, m in enumerate(modules):
        if m.stage_index != j:
            raise ConfigMismatch(f"module {j} carries stage_index {m.stage_index}")
        if j > 0 and m.input_width != modules[j - 1].output_width:
            raise ConfigMismatch(
                f"stage {j} input width {m.input_width} != stage {j - 1} "
                f"output width {modules[j - 1].output_width}")


def _local_step(module: LocalModule) -> float:
    lr = cosine_lr(module.optimizer.step_count, module.schedule)
    sgd_nesterov_step(module.parameters(), module.optimizer, lr)
    return lr


def run_epoch(mode: RunMode, modules: Sequence[LocalModule],
              dataset_iter: Iterable, config: RunConfig | None = None,
              ) -> EpochMetrics:
    """Feed every batch of ``dataset_iter`` through the pipeline once."""
    config = config or RunConfig()
    _validate_modules(modules)
    if mode == RunMode.E2E:
        return _run_e2e(modules, dataset_iter, config, virtual_time=False)
    if mode == RunMode.NAIVE_PP:
        return _run_threaded(modules, dataset_iter, config, ppll=False)
    if mode == RunMode.PPLL:
        return _run_threaded(modules, dataset_iter, config, ppll=True)
    raise ConfigMismatch(f"unknown mode {mode!r}")


def run_deterministic(mode: RunMode, modules: Sequence[LocalModule],
                      dataset_iter: Iterable, config: RunConfig | None = None,
                      ) -> EpochMetrics:
    """Single-threaded replay of ``mode``'s dataflow with virtual timing.

    Losses and parameter trajectories are identical to the threaded run
    (FIFO order fixes them); wall/busy columns count scheduler steps instead
    of seconds so repeated runs are byte-identical.
    """
    config = config or RunConfig()
    _validate_modules(modules)
    if mode == RunMode.E2E:
        return _run_e2e(modules, dataset_iter, config, virtual_time=True)
    if mode == RunMode.NAIVE_PP:
        return _run_naive_serial(modules, dataset_iter, config)
    if mode == RunMode.PPLL:
        return _run_ppll_roundrobin(modules, dataset_iter, config)
    raise ConfigMismatch(f"unknown mode {mode!r}")


# --- end-to-end (single tape, single thread) --------------------------------

def _run_e2e(modules: Sequence[LocalModule], dataset_iter: Iterable,
             config: RunConfig, virtual_time: bool) -> EpochMetrics:
    s = len(modules)
    metrics = EpochMetrics(n_stages=s)
    t0 = time.perf_counter()
    n = 0
    for batch_id, (x, y) in enumerate(dataset_iter):
        n += 1
        h = Tensor(x)
        with GradTape():
            for m in modules:
                t_j = time.perf_counter()
                h = block_forward(m, h)
                _sleep(config.pad_for(m.stage_index))
                metrics.busy_time[m.stage_index] += time.perf_counter() - t_j
            t_tail = time.perf_counter()
            loss = softmax_xent(h, y)
            backward(loss)
            metrics.busy_time[s - 1] += time.perf_counter() - t_tail
        for m in modules:
            t_j = time.perf_counter()
            _sleep(config.pad_for(m.stage_index))  # stage's share of backward
            metrics.busy_time[m.stage_index] += time.perf_counter() - t_j
        for m in modules:
            t_j = time.perf_counter()
            lr = cosine_lr(m.optimizer.step_count, m.schedule)
            sgd_nesterov_step(m.block_parameters(), m.optimizer, lr)
            _sleep(config.pad_for(m.stage_index))
            metrics.busy_time[m.stage_index] += time.perf_counter() - t_j
        metrics.loss_history[s - 1].append(float(loss.data))
        for j in range(s):
            metrics.batches_processed[j] += 1
    metrics.n_batches = n
    metrics.wall_time = float(n) if virtual_time else (time.perf_counter() - t0)
    if virtual_time:
        metrics.busy_time = [float(n)] * s
    return metrics


def _sleep(seconds: float) -> None:
    if seconds > 0:
        time.sleep(seconds)


# --- threaded pipelines ------------------------------------------------------

def _run_threaded(modules: Sequence[LocalModule], dataset_iter: Iterable,
                  config: RunConfig, ppll: bool) -> EpochMetrics:
    s = len(modules)
    metrics = EpochMetrics(n_stages=s)
    in_bufs = [StageBuffer(config.buffer_capacity) for _ in range(s)]
    # boundary gradient channels for the synchronised backward (naive PP):
    # grad_back[j] carries dLoss/d(output of stage j) from stage j+1 to stage j
    grad_back: list[queue.Queue] = [queue.Queue(maxsize=1) for _ in range(max(0, s - 1))]
    errors: list[tuple[int, BaseException]] = []
    stop = threading.Event()
    stage_staleness: list[Counter] = [Counter() for _ in range(s)]

    def fail(stage: int, exc: BaseException) -> None:
        errors.append((stage, exc))
        stop.set()
        for buf in in_bufs:
            buf.close()

    def source() -> None:
        try:
            for batch_id, (x, y) in enumerate(dataset_iter):
                if stop.is_set():
                    return
                in_bufs[0].producer_progress = batch_id
                in_bufs[0].push(BufferSlot(batch_id, Tensor(x), np.asarray(y)))
            in_bufs[0].close()
        except PushAfterClose:
            pass  # shut down mid-epoch by a failing worker
        except BaseException as exc:  # reported as WorkerPanic after join
            fail(-1, exc)

    def worker(j: int) -> None:
        module = modules[j]
        last = j == s - 1
        pad = config.pad_for(j)
        try:
            while True:
                slot = in_bufs[j].pop()
                if slot is END_OF_STREAM:
                    if not last:
                        in_bufs[j + 1].close()
                    return
                stale = in_bufs[j].producer_progress - slot.batch_id
                stage_staleness[j][max(0, stale)] += 1
                if not last:
                    in_bufs[j + 1].producer_progress = slot.batch_id
                t_busy = time.perf_counter()
                with GradTape():
                    if ppll or j == 0:
                        x = slot.features  # detached: gradients stay local
                    else:
                        # boundary leaf so the task gradient can flow back
                        x = Tensor(slot.features.data, track_grad=True)
                    h = block_forward(module, x)
                    _sleep(pad)
                    if not last:
                        x_out = h.detach()
                        _sleep(config.comm_padding)
                        metrics.busy_time[j] += time.perf_counter() - t_busy
                        in_bufs[j + 1].push(BufferSlot(slot.batch_id, x_out, slot.labels))
                        t_busy = time.perf_counter()
                    if ppll:
                        logits = aux_forward(module, h)
                        loss = softmax_xent(logits, slot.labels)
                        backward(loss)
                    elif last:
                        loss = softmax_xent(h, slot.labels)
                        backward(loss)
                if ppll:
                    _sleep(pad)  # backward share
                    _local_step(module)
                    _sleep(pad)  # update share
                    metrics.loss_history[j].append(float(loss.data))
                else:
                    if not last:
                        metrics.busy_time[j] += time.perf_counter() - t_busy
                        g = _recv_grad(grad_back[j], stop)  # blocking: not busy
                        t_busy = time.perf_counter()
                        if g is None:
                            return
                        backward_from(h, g)
                    _sleep(pad)
                    if j > 0:
                        grad_back[j - 1].put(x.grad)
                    lr = cosine_lr(module.optimizer.step_count, module.schedule)
                    sgd_nesterov_step(module.block_parameters(), module.optimizer, lr)
                    _sleep(pad)
                    if last:
                        metrics.loss_history[j].append(float(loss.data))
                metrics.busy_time[j] += time.perf_counter() - t_busy
                metrics.batches_processed[j] += 1
        except PushAfterClose:
            pass  # peer failed; epoch already aborting
        except BaseException as exc:
            fail(j, exc)

    threads = [threading.Thread(target=source, name="locopipe-source", daemon=True)]
    threads += [threading.Thread(target=worker, args=(j,), name=f"locopipe-stage-{j}",
                                 daemon=True) for j in range(s)]
    t0 = time.perf_counter()
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    metrics.wall_time = time.perf_counter() - t0

    if errors:
        stage, exc = errors[0]
        raise WorkerPanic(stage, repr(exc)) from exc

    for j in range(s):
        metrics.staleness.update(stage_staleness[j])
    metrics.n_batches = metrics.batches_processed[0]
    metrics.buffer_high_water = [buf.high_water for buf in in_bufs]
    return metrics


def _recv_grad(channel: queue.Queue, stop: threading.Event):
    """Blocking gradient receive that gives up if the epoch is aborting."""
    while True:
        try:
            return channel.get(timeout=0.05)
        except queue.Empty:
            if stop.is_set():
                return None


# --- deterministic single-thread replays -------------------------------------

def _run_naive_serial(modules: Sequence[LocalModule], dataset_iter: Iterable,
                      config: RunConfig) -> EpochMetrics:
    """Naive PP collapses to strict per-batch serialisation, so the
    deterministic replay just chains forward and backward across stages."""
    s = len(modules)
    metrics = EpochMetrics(n_stages=s)
    n = 0
    for batch_id, (x, y) in enumerate(dataset_iter):
        n += 1
        y = np.asarray(y)
        leaves: list[Tensor] = []
        outs: list[Tensor] = []
        tapes: list[GradTape] = []
        h_data = x
        for j, m in enumerate(modules):
            x_t = Tensor(h_data, track_grad=(j > 0))
            with GradTape() as tape:
                h = block_forward(m, x_t)
            leaves.append(x_t)
            outs.append(h)
            tapes.append(tape)
            h_data = h.data
        loss = None
        g = None
        for j in reversed(range(s)):
            if j == s - 1:
                loss_t = _tail_loss(outs[j], y)
                loss = float(loss_t.data)
                backward(loss_t)
            else:
                backward_from(outs[j], g)
            g = leaves[j].grad if j > 0 else None
            lr = cosine_lr(modules[j].optimizer.step_count, modules[j].schedule)
            sgd_nesterov_step(modules[j].block_parameters(), modules[j].optimizer, lr)
        metrics.loss_history[s - 1].append(loss)
        for j in range(s):
            metrics.batches_processed[j] += 1
    metrics.n_batches = n
    metrics.wall_time = float(n)
    metrics.busy_time = [float(n)] * s
    return metrics


def _tail_loss(h: Tensor, y: np.ndarray) -> Tensor:
    """Task loss on the final stage's output, recorded on that stage's tape."""
    tape = h._tape
    if tape is None:
        raise ConfigMismatch("final stage output was produced without a tape")
    with tape:
        return softmax_xent(h, y)


def _run_ppll_roundrobin(modules: Sequence[LocalModule], dataset_iter: Iterable,
                         config: RunConfig) -> EpochMetrics:
    """PPLL dataflow on one thread: per round, the source tops up the first
    buffer, then each stage in index order processes at most one batch
    (only if its input is available and its output buffer has room)."""
    s = len(modules)
    M = config.buffer_capacity
    metrics = EpochMetrics(n_stages=s)
    stream = iter(dataset_iter)
    stream_done = False
    bufs: list[deque] = [deque() for _ in range(s)]
    closed = [False] * s
    progress = [-1] * s  # progress[j]: batch id the producer of buffer j last started
    done = [False] * s
    next_id = 0
    rounds = 0
    high_water = [0] * s

    while not all(done):
        rounds += 1
        while not stream_done and len(bufs[0]) < M:
            try:
                x, y = next(stream)
            except StopIteration:
                stream_done = True
                closed[0] = True
                break
            progress[0] = next_id
            bufs[0].append(BufferSlot(next_id, Tensor(x), np.asarray(y)))
            high_water[0] = max(high_water[0], len(bufs[0]))
            next_id += 1
        for j in range(s):
            if done[j]:
                continue
            if not bufs[j]:
                if closed[j]:
                    done[j] = True
                    if j < s - 1:
                        closed[j + 1] = True
                continue
            last = j == s - 1
            if not last and len(bufs[j + 1]) >= M:
                continue  # downstream full: would block on push
            slot = bufs[j].popleft()
            metrics.staleness[max(0, progress[j] - slot.batch_id)] += 1
            if not last:
                progress[j + 1] = slot.batch_id
            loss, x_out = _ppll_step(modules[j], slot)
            if not last:
                bufs[j + 1].append(BufferSlot(slot.batch_id, x_out, slot.labels))
                high_water[j + 1] = max(high_water[j + 1], len(bufs[j + 1]))
            metrics.loss_history[j].append(loss)
            metrics.batches_processed[j] += 1

    metrics.n_batches = metrics.batches_processed[0]
    metrics.wall_time = float(rounds)
    metrics.busy_time = [float(c) for c in metrics.batches_processed]
    metrics.buffer_high_water = high_water
    return metrics


def _ppll_step(module: LocalModule, slot: BufferSlot) -> tuple[float, Tensor]:
    """One local step, op-for-op identical to the threaded PPLL worker."""
    with GradTape():
        h = block_forward(module, slot.features)
        x_out = h.detach()
        logits = aux_forward(module, h)
        loss = softmax_xent(logits, slot.labels)
        backward(loss)
    _local_step(module)
    return float(loss.data), x_out

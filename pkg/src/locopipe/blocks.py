"""Network blocks, stage partitioning, and per-stage auxiliary heads.

A fully-connected network is described by its layer widths and split into
contiguous stages.  Every stage except the last gets an auxiliary classifier
head so it can compute a local loss without waiting for downstream stages;
the last stage's block already ends in the real task classifier, so its local
loss is the network's output loss (which also makes the single-stage case
exactly end-to-end training).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigMismatch, DimensionMismatch, TooManyStages
from .optim import LrSchedule, OptimizerState, cosine_lr, sgd_nesterov_step
from .tensor import GradTape, Tensor, backward, bias_add, matmul, relu, softmax_xent


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths of a fully-connected classifier.

    ``layer_dims`` has one entry per interface: n+1 entries describe n weight
    layers.  The last entry is the class count.  ReLU is applied after every
    layer except the final one.
    """

    layer_dims: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ValueError("need at least two layer dims (input and output)")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {self.layer_dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    def layer_params(self, i: int) -> int:
        """Parameter count (weights + bias) of layer i."""
        return self.layer_dims[i] * self.layer_dims[i + 1] + self.layer_dims[i + 1]


@dataclass(frozen=True)
class PartitionPlan:
    """Contiguous, disjoint, covering assignment of layers to stages."""

    n_stages: int
    boundaries: tuple[tuple[int, int], ...]  # half-open [start, end) layer ranges

    def __post_init__(self):
        if self.n_stages != len(self.boundaries):
            raise ConfigMismatch("stage count does not match boundary list")
        prev_end = 0
        for start, end in self.boundaries:
            if start != prev_end or end <= start:
                raise ConfigMismatch(f"boundaries not contiguous/non-empty: {self.boundaries}")
            prev_end = end


def partition(spec: NetworkSpec, s: int) -> PartitionPlan:
    """Split layers into ``s`` contiguous stages minimising the max stage
    parameter count; ties prefer the earliest split points."""
    n = spec.n_layers
    if s < 1:
        raise ValueError(f"need at least one stage, got {s}")
    if s > n:
        raise TooManyStages(f"{s} stages requested but only {n} layers")
    costs = [spec.layer_params(i) for i in range(n)]

    best_cuts: tuple[int, ...] | None = None
    best_load = math.inf
    # combinations() yields cut tuples in lexicographic order, so the first
    # strict minimum is the earliest-split tie-break.
    for cuts in itertools.combinations(range(1, n), s - 1):
        edges = (0,) + cuts + (n,)
        load = max(sum(costs[a:b]) for a, b in zip(edges, edges[1:]))
        if load < best_load:
            best_load = load
            best_cuts = cuts
    edges = (0,) + best_cuts + (n,)
    return PartitionPlan(s, tuple(zip(edges, edges[1:])))


def aux_depth(l: int, d_prime: int, n: int) -> int:
    """Auxiliary-head depth for stage index ``l``: d' - floor(l / n), at least 0.

    Earlier stages get deeper heads; every ``n`` stages the depth drops by one.
    """
    if l < 0 or d_prime < 0 or n < 1:
        raise ValueError(f"bad aux_depth arguments ({l}, {d_prime}, {n})")
    return max(0, d_prime - l // n)


@dataclass
class LinearLayer:
    """One dense layer; ``relu_after`` is fixed at build time."""

    W: Tensor
    b: Tensor
    relu_after: bool

    @property
    def out_width(self) -> int:
        return self.W.shape[1]


@dataclass
class AuxHead:
    """Local classifier: ``depth`` hidden ReLU layers then a linear readout."""

    depth: int
    hidden_width: int
    layers: list[LinearLayer]

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in (layer.W, layer.b)]


@dataclass(frozen=True)
class Hyperparams:
    """Training settings shared by every stage's local optimizer."""

    lr0: float = 0.01
    lr_min: float = 0.0
    total_steps: int = 1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 42
    aux_hidden_width: int | None = None  # None: use the block's output width


class LocalModule:
    """One gradient-isolated pipeline stage: block layers + optional aux head.

    ``assigned_aux_depth`` records the depth formula's value for this stage
    even for the final stage, whose constructed head is empty because its
    block already ends in the task classifier.
    """

    def __init__(self, stage_index: int, layers: list[LinearLayer],
                 aux: AuxHead | None, optimizer: OptimizerState,
                 schedule: LrSchedule, assigned_aux_depth: int):
        if not layers:
            raise ConfigMismatch("a stage needs at least one layer")
        self.stage_index = stage_index
        self.layers = layers
        self.aux = aux
        self.optimizer = optimizer
        self.schedule = schedule
        self.assigned_aux_depth = assigned_aux_depth

    @property
    def input_width(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_width(self) -> int:
        return self.layers[-1].out_width

    def block_parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in (layer.W, layer.b)]

    def parameters(self) -> list[Tensor]:
        params = self.block_parameters()
        if self.aux is not None:
            params += self.aux.parameters()
        return params

    def __repr__(self) -> str:
        depth = "none" if self.aux is None else self.aux.depth
        return (f"LocalModule(stage={self.stage_index}, layers={len(self.layers)}, "
                f"aux_depth={depth})")


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int,
                relu_after: bool) -> LinearLayer:
    bound = 1.0 / math.sqrt(fan_in)
    W = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), track_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=(fan_out,)), track_grad=True)
    return LinearLayer(W, b, relu_after)


def build_modules(spec: NetworkSpec, plan: PartitionPlan, d_prime: int, n: int,
                  hyper: Hyperparams) -> list[LocalModule]:
    """Instantiate one LocalModule per stage of ``plan``.

    Initialisation is seeded per stage (seed + stage_index), so a stage's
    initial block parameters do not depend on how many stages exist.
    """
    if plan.boundaries[-1][1] != spec.n_layers:
        raise ConfigMismatch("partition plan does not cover the network")
    dims = spec.layer_dims
    classes = spec.num_classes
    last_stage = plan.n_stages - 1

    modules: list[LocalModule] = []
    for j, (start, end) in enumerate(plan.boundaries):
        rng = np.random.default_rng(hyper.seed + j)
        layers = [
            _init_layer(rng, dims[i], dims[i + 1], relu_after=(i != spec.n_layers - 1))
            for i in range(start, end)
        ]
        assigned = aux_depth(j, d_prime, n)
        aux: AuxHead | None = None
        if j != last_stage:
            block_out = dims[end]
            hidden = hyper.aux_hidden_width or block_out
            widths = [block_out] + [hidden] * assigned + [classes]
            aux_layers = [
                _init_layer(rng, widths[i], widths[i + 1],
                            relu_after=(i != len(widths) - 2))
                for i in range(len(widths) - 1)
            ]
            aux = AuxHead(assigned, hidden, aux_layers)
        params = [t for layer in layers for t in (layer.W, layer.b)]
        if aux is not None:
            params += aux.parameters()
        optimizer = OptimizerState(params, hyper.momentum, hyper.weight_decay)
        schedule = LrSchedule(hyper.lr0, hyper.lr_min, hyper.total_steps)
        modules.append(LocalModule(j, layers, aux, optimizer, schedule,
                                   assigned_aux_depth=assigned))
    return modules


def _forward_layers(layers: Sequence[LinearLayer], x: Tensor) -> Tensor:
    h = x
    for layer in layers:
        h = bias_add(matmul(h, layer.W), layer.b)
        if layer.relu_after:
            h = relu(h)
    return h


def block_forward(module: LocalModule, x: Tensor) -> Tensor:
    """Run the stage's block layers; records on the caller's open tape."""
    if x.data.ndim != 2 or x.shape[1] != module.input_width:
        raise DimensionMismatch(
            f"stage {module.stage_index} expects width {module.input_width}, "
            f"got {x.shape}")
    return _forward_layers(module.layers, x)


def aux_forward(module: LocalModule, h: Tensor) -> Tensor:
    """Local logits for the stage: the aux head, or ``h`` itself for the
    final stage (whose block output already is the task logits)."""
    if module.aux is None:
        return h
    return _forward_layers(module.aux.layers, h)


def local_loss_and_update(module: LocalModule, x_in: Tensor, labels,
                          on_output: Callable[[Tensor], None] | None = None,
                          ) -> tuple[float, Tensor]:
    """One local training step: forward, local loss, backward, SGD update.

    ``x_in`` must be detached (gradient isolation: nothing flows upstream).
    The detached stage output is captured before the update — it reflects the
    pre-step parameters — and handed to ``on_output`` (the pipeline's push
    hook) before the local backward runs, matching the stage loop's order:
    pop, forward, push, learn.
    """
    if x_in.track_grad:
        raise ValueError("stage input must be detached")
    with GradTape():
        h = block_forward(module, x_in)
        x_out = h.detach()
        if on_output is not None:
            on_output(x_out)
        logits = aux_forward(module, h)
        loss = softmax_xent(logits, labels)
        backward(loss)
    lr = cosine_lr(module.optimizer.step_count, module.schedule)
    sgd_nesterov_step(module.parameters(), module.optimizer, lr)
    return float(loss.data), x_out


@dataclass(frozen=True)
class MemoryProxy:
    """Float counts standing in for device memory: parameters and the peak
    live activations for one forward+backward at a given batch size."""

    params: int
    activations: int

    @property
    def total(self) -> int:
        return self.params + self.activations


def memory_footprint(module: LocalModule, batch_size: int) -> MemoryProxy:
    """Analytic per-stage memory proxy in float counts.

    Activations count every layer interface that backward needs retained:
    the block input plus each block and aux layer output, times batch size.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    params = sum(p.data.size for p in module.parameters())
    widths = [module.input_width] + [layer.out_width for layer in module.layers]
    if module.aux is not None:
        widths += [layer.out_width for layer in module.aux.layers]
    return MemoryProxy(int(params), int(batch_size * sum(widths)))

"""locopipe: pipeline-parallel training via gradient-isolated local learning.

A network is split into contiguous stages joined by bounded FIFO buffers.
Each stage trains against its own auxiliary classifier the moment its input
arrives, so no stage ever waits for a downstream backward pass.  The package
pairs that runtime with an analytic cost model and a discrete-event schedule
simulator for reasoning about when the asynchronous discipline wins.
"""

from .blocks import (
    AuxHead,
    Hyperparams,
    LinearLayer,
    LocalModule,
    MemoryProxy,
    NetworkSpec,
    PartitionPlan,
    aux_depth,
    aux_forward,
    block_forward,
    build_modules,
    local_loss_and_update,
    memory_footprint,
    partition,
)
from .config import ExperimentConfig, parse_config, parse_config_text, serialize_config
from .costs import (
    CommModel,
    CostEstimate,
    ScheduleEvent,
    ScheduleResult,
    StageProfile,
    ppll_beats_pp,
    ratio_ideal,
    render_gantt_csv,
    simulate_schedule,
    steady_throughput,
    t_e2e,
    t_pp,
    t_ppll,
)
from .data import (
    BatchIterator,
    Dataset,
    batches,
    gen_blobs,
    gen_spirals,
    load_idx,
    spiral_reference,
)
from .harness import (
    ComparisonReport,
    MetricsRecord,
    ModeSummary,
    evaluate,
    make_datasets,
    report_table,
    run_experiment,
    write_metrics_csv,
)
from .optim import LrSchedule, OptimizerState, cosine_lr, sgd_nesterov_step
from .runtime import (
    END_OF_STREAM,
    BufferSlot,
    EpochMetrics,
    RunConfig,
    RunMode,
    StageBuffer,
    run_deterministic,
    run_epoch,
    throughput,
)
from .tensor import (
    GradTape,
    Tensor,
    add,
    backward,
    backward_from,
    bias_add,
    matmul,
    relu,
    scale,
    softmax_xent,
    sum_all,
)

__version__ = "0.1.0"

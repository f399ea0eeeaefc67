"""Analytic batch-time model and a discrete-event schedule simulator.

Three execution disciplines share one per-stage cost vocabulary (forward,
backward, update for the block and for its aux head):

* ``e2e``      — everything on one device, serial per batch.
* ``naive_pp`` — pipeline stages, but each batch's forward chain completes
                 and the synchronised backward chain returns before the next
                 batch starts.
* ``ppll``     — stages run concurrently; each stage's batch needs only the
                 upstream forward of the same batch, its own previous batch,
                 and a free slot in the downstream buffer.

The per-batch communication total Q is modelled as a single scalar charged
once per batch: in the serial chain for naive_pp, and inside the first
stage's cycle for ppll (the first stage feeds the pipe, so its cycle governs
steady throughput when it is the longest stage, which the depth-decreasing
aux assignment makes the typical regime).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import EmptyEvents, EmptyProfiles, InvalidMode, ZeroDuration

MODES = ("e2e", "naive_pp", "ppll")


@dataclass(frozen=True)
class StageProfile:
    """Per-batch costs of one stage, in abstract time units (often seconds).

    ``f``/``b``/``u`` cover the stage's block; the ``a``-suffixed fields cover
    its auxiliary head.  All must be non-negative.
    """

    f: float
    b: float
    u: float
    f_a: float = 0.0
    b_a: float = 0.0
    u_a: float = 0.0

    def __post_init__(self):
        for name in ("f", "b", "u", "f_a", "b_a", "u_a"):
            if getattr(self, name) < 0:
                raise ValueError(f"stage cost {name} must be >= 0")

    @property
    def cycle(self) -> float:
        """Serial time for one full local step (block + aux, no comm)."""
        return self.f + self.f_a + (self.b + self.b_a) + (self.u + self.u_a)


@dataclass(frozen=True)
class CommModel:
    """Total per-batch transfer cost Q, one scalar for the whole pipeline."""

    q_total: float = 0.0

    def __post_init__(self):
        if self.q_total < 0:
            raise ValueError("q_total must be >= 0")


@dataclass(frozen=True)
class CostEstimate:
    """Analytic per-batch time with its additive component breakdown."""

    mode: str
    batch_time: float
    components: dict[str, float] = field(default_factory=dict)


def _check_profiles(profiles: Sequence[StageProfile]) -> None:
    if not profiles:
        raise EmptyProfiles("need at least one stage profile")


def t_e2e(profiles: Sequence[StageProfile]) -> CostEstimate:
    """Single-device serial batch time: sum of forwards, backwards, updates.

    Aux heads and communication do not exist in this discipline.
    """
    _check_profiles(profiles)
    F = sum(p.f for p in profiles)
    B = sum(p.b for p in profiles)
    U = sum(p.u for p in profiles)
    return CostEstimate("e2e", F + B + U, {"F": F, "B": B, "U": U})


def t_pp(profiles: Sequence[StageProfile], comm: CommModel) -> CostEstimate:
    """Naive-pipeline batch time: the serial cost plus the transfer total."""
    _check_profiles(profiles)
    base = t_e2e(profiles)
    comps = dict(base.components)
    comps["Q"] = comm.q_total
    return CostEstimate("naive_pp", base.batch_time + comm.q_total, comps)


def t_ppll(profiles: Sequence[StageProfile], comm: CommModel) -> CostEstimate:
    """Steady batch time when the first stage governs the pipeline.

    Only stage 1 appears: its block forward, the transfer, its aux forward,
    and the combined backward/update of block plus aux.  Summation order
    matches the simulator's event order (forward, comm, aux forward,
    backward, update) so the two agree to float round-off.
    """
    _check_profiles(profiles)
    p = profiles[0]
    F_a1 = p.f + p.f_a
    B_a1 = p.b + p.b_a
    U_a1 = p.u + p.u_a
    total = p.f + comm.q_total + p.f_a + (p.b + p.b_a) + (p.u + p.u_a)
    return CostEstimate("ppll", total, {
        "F_a1": F_a1, "B_a1": B_a1, "U_a1": U_a1, "Q": comm.q_total,
    })


def ratio_ideal(k: float, s: int) -> float:
    """Idealised PPLL/PP batch-time ratio (k+1)/s.

    Assumes per-stage costs are uniform, the first stage's aux costs ``k``
    times its block, and communication is negligible.
    """
    if s < 1:
        raise ValueError(f"need s >= 1, got {s}")
    if k < 0:
        raise ValueError(f"need k >= 0, got {k}")
    return (k + 1.0) / s


def ppll_beats_pp(profiles: Sequence[StageProfile], comm: CommModel,
                  ) -> tuple[bool, dict[str, float]]:
    """Compare steady batch times under the same communication model.

    Returns the verdict plus the three margin terms whose joint positivity
    is sufficient for a win: spare backward time, spare update time, and
    the downstream forward work the aux head replaces.
    """
    _check_profiles(profiles)
    p1 = profiles[0]
    margins = {
        "backward_margin": sum(p.b for p in profiles) - (p1.b + p1.b_a),
        "update_margin": sum(p.u for p in profiles) - (p1.u + p1.u_a),
        "forward_margin": sum(p.f for p in profiles[1:]) - p1.f_a,
    }
    beats = t_ppll(profiles, comm).batch_time < t_pp(profiles, comm).batch_time
    return beats, margins


@dataclass(frozen=True)
class ScheduleEvent:
    """One simulated phase occupying a stage for [start, end)."""

    stage: int
    kind: str  # forward | aux_forward | backward | update | comm
    batch_id: int
    start: float
    end: float


@dataclass(frozen=True)
class ScheduleResult:
    events: tuple[ScheduleEvent, ...]
    makespan: float
    steady_batch_time: float
    batch_finish: tuple[float, ...]


def simulate_schedule(profiles: Sequence[StageProfile], comm: CommModel,
                      mode: str, n_batches: int,
                      buffer_capacity: int = 2) -> ScheduleResult:
    """Event-level timeline of ``n_batches`` under the given discipline.

    ``steady_batch_time`` is the finish-time difference of the last two
    batches; run at least 2*s batches so the pipeline-fill transient has
    cleared before it is measured.
    """
    _check_profiles(profiles)
    if mode not in MODES:
        raise InvalidMode(f"mode must be one of {MODES}, got {mode!r}")
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    if buffer_capacity < 1:
        raise ValueError("buffer_capacity must be >= 1")

    if mode == "ppll":
        events, finishes = _simulate_ppll(profiles, comm, n_batches, buffer_capacity)
    else:
        events, finishes = _simulate_serial(profiles, comm, mode, n_batches)

    makespan = max(e.end for e in events) if events else 0.0
    if n_batches >= 2:
        steady = finishes[-1] - finishes[-2]
    else:
        steady = finishes[-1]
    return ScheduleResult(tuple(events), makespan, steady, tuple(finishes))


def _simulate_serial(profiles: Sequence[StageProfile], comm: CommModel,
                     mode: str, n_batches: int,
                     ) -> tuple[list[ScheduleEvent], list[float]]:
    """e2e and naive_pp: one batch at a time, phase after phase.

    naive_pp inserts the transfer total after the forward chain and runs the
    backward chain stage by stage (each stage updates right after its own
    backward, as the synchronised runtime does).  e2e omits the transfer.
    """
    s = len(profiles)
    events: list[ScheduleEvent] = []
    finishes: list[float] = []
    clock = 0.0

    def emit(stage: int, kind: str, batch: int, dur: float) -> None:
        nonlocal clock
        events.append(ScheduleEvent(stage, kind, batch, clock, clock + dur))
        clock += dur

    for t in range(n_batches):
        for j in range(s):
            emit(j, "forward", t, profiles[j].f)
        if mode == "naive_pp":
            emit(s - 1, "comm", t, comm.q_total)
            for j in reversed(range(s)):
                emit(j, "backward", t, profiles[j].b)
                emit(j, "update", t, profiles[j].u)
        else:
            for j in reversed(range(s)):
                emit(j, "backward", t, profiles[j].b)
            for j in range(s):
                emit(j, "update", t, profiles[j].u)
        finishes.append(clock)
    return events, finishes


def _simulate_ppll(profiles: Sequence[StageProfile], comm: CommModel,
                   n_batches: int, capacity: int,
                   ) -> tuple[list[ScheduleEvent], list[float]]:
    """Asynchronous stages under FIFO dataflow with bounded buffers.

    Stage j, batch t starts once three constraints clear: upstream pushed
    batch t, the stage finished batch t-1, and (for the push itself) the
    consumer has drained batch t-capacity from the connecting buffer.
    """
    s = len(profiles)
    events: list[ScheduleEvent] = []
    # pushed[j][t]: time stage j's batch-t output lands in buffer j (upstream
    # availability for stage j+1).  popped[j][t]: time stage j starts batch t
    # (the slot leaves buffer j-1 at that moment).
    pushed = [[0.0] * n_batches for _ in range(s)]
    popped = [[0.0] * n_batches for _ in range(s)]
    done = [[0.0] * n_batches for _ in range(s)]

    for t in range(n_batches):
        for j in range(s):
            ready = pushed[j - 1][t] if j > 0 else 0.0
            start = max(ready, done[j][t - 1] if t > 0 else 0.0)
            popped[j][t] = start
            p = profiles[j]
            clock = start

            def emit(kind: str, dur: float) -> None:
                nonlocal clock
                events.append(ScheduleEvent(j, kind, t, clock, clock + dur))
                clock += dur

            emit("forward", p.f)
            if j == 0:
                # the whole per-batch transfer budget rides with the stream
                # stage's push, matching the analytic steady-state form
                emit("comm", comm.q_total)
            if j < s - 1:
                # wait for a free slot before the push lands
                if t >= capacity:
                    clock = max(clock, popped[j + 1][t - capacity])
                pushed[j][t] = clock
            emit("aux_forward", p.f_a)
            emit("backward", p.b + p.b_a)
            emit("update", p.u + p.u_a)
            done[j][t] = clock

    finishes = [max(done[j][t] for j in range(s)) for t in range(n_batches)]
    return events, finishes


def steady_throughput(result: ScheduleResult) -> float:
    """Batches per time unit implied by the steady batch time."""
    if result.steady_batch_time <= 0.0:
        raise ZeroDuration("steady batch time is not positive")
    return 1.0 / result.steady_batch_time


def render_gantt_csv(events: Sequence[ScheduleEvent]) -> str:
    """Delimited timeline, one row per event, sorted by (start, stage)."""
    if not events:
        raise EmptyEvents("no events to render")
    rows = sorted(events, key=lambda e: (e.start, e.stage))
    lines = ["stage,kind,batch_id,start,end"]
    for e in rows:
        lines.append(f"{e.stage},{e.kind},{e.batch_id},{e.start!r},{e.end!r}")
    return "\n".join(lines) + "\n"

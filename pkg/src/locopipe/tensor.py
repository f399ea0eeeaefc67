"""Dense float64 tensors with tape-based reverse-mode differentiation.

The tape is a Wengert list: primitive ops append nodes in execution order and
``backward`` replays them once, in reverse.  A tape and the tensors recorded on
it form a single-threaded unit of work; the active tape lives in thread-local
storage so independent units (one per pipeline stage) can run on separate
threads without touching each other.
"""
from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTape,
    LabelOutOfRange,
    NonFiniteError,
    NotScalar,
)

_TLS = threading.local()


def _stack() -> list["GradTape"]:
    try:
        return _TLS.stack
    except AttributeError:
        _TLS.stack = []
        return _TLS.stack


def active_tape() -> "GradTape | None":
    """The innermost open tape on this thread, or None."""
    stack = _stack()
    return stack[-1] if stack else None


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A float64 array plus an optional gradient of the same shape.

    ``track_grad`` marks leaves (parameters) whose gradients should be
    accumulated.  Intermediates produced from tracked inputs under an open
    tape are tracked automatically.
    """

    __slots__ = ("data", "grad", "track_grad", "_tape")

    def __init__(self, data, track_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.track_grad = bool(track_grad)
        self._tape: GradTape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """A view of the same values with no gradient tracking."""
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", track_grad=True" if self.track_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class _Node:
    """One recorded primitive: the output and its input-adjoint closures."""

    __slots__ = ("out", "pulls")

    def __init__(self, out: Tensor, pulls: list[tuple[Tensor, Callable]]):
        self.out = out
        self.pulls = pulls


class GradTape:
    """Ordered record of primitive ops, consumed by a single backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        # instrumentation: number of node adjoints executed by backward()
        self.adjoints_run = 0

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _stack().pop()

    def _record(self, out: Tensor, pulls: list[tuple[Tensor, Callable]]) -> None:
        out.track_grad = True
        out._tape = self
        self.nodes.append(_Node(out, pulls))


def _record_op(out: Tensor, pairs: list[tuple[Tensor, Callable]]) -> Tensor:
    """Attach ``out`` to the active tape if any input is tracked."""
    tape = active_tape()
    if tape is not None:
        pulls = [(t, fn) for t, fn in pairs if t.track_grad]
        if pulls:
            tape._record(out, pulls)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g)  # copy: adjoints may alias the output grad
    else:
        t.grad += g


# --- primitive operations --------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product a @ b."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionMismatch(
            f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"matmul inner dims differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data
    _ensure_finite(out_data, "matmul")
    out = Tensor(out_data)
    return _record_op(out, [
        (a, lambda g, b=b: g @ b.data.T),
        (b, lambda g, a=a: a.data.T @ g),
    ])


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient 0 at ties."""
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0
    return _record_op(out, [(x, lambda g, mask=mask: g * mask)])


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"add shapes differ: {a.shape} vs {b.shape}")
    out_data = a.data + b.data
    _ensure_finite(out_data, "add")
    out = Tensor(out_data)
    return _record_op(out, [(a, lambda g: g), (b, lambda g: g)])


def bias_add(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of a [B x n] matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or v.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"bias_add shapes: {m.shape} + {v.shape}")
    out_data = m.data + v.data
    _ensure_finite(out_data, "bias_add")
    out = Tensor(out_data)
    return _record_op(out, [
        (m, lambda g: g),
        (v, lambda g: g.sum(axis=0)),
    ])


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every element by the scalar constant c."""
    c = float(c)
    if not np.isfinite(c):
        raise NonFiniteError("scale factor is non-finite")
    out_data = x.data * c
    _ensure_finite(out_data, "scale")
    out = Tensor(out_data)
    return _record_op(out, [(x, lambda g, c=c: g * c)])


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.asarray(x.data.sum()))
    _ensure_finite(out.data, "sum_all")
    return _record_op(out, [(x, lambda g, shape=x.shape: np.broadcast_to(g, shape))])


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over a batch of [B x C] logits.

    Log-sum-exp is stabilised by subtracting the per-row max, so large logits
    do not overflow.  The adjoint is (softmax - onehot) / B.
    """
    if logits.data.ndim != 2:
        raise DimensionMismatch(f"softmax_xent needs [B x C] logits, got {logits.shape}")
    B, C = logits.shape
    if B < 1 or C < 1:
        raise DimensionMismatch("softmax_xent needs a non-empty batch")
    y = np.asarray(labels)
    if y.shape != (B,):
        raise DimensionMismatch(f"labels shape {y.shape} does not match batch {B}")
    if not np.issubdtype(y.dtype, np.integer):
        raise LabelOutOfRange("labels must be integers")
    if y.min() < 0 or y.max() >= C:
        raise LabelOutOfRange(f"labels must lie in [0, {C})")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(denom)
    loss = -logp[np.arange(B), y].mean()
    out = Tensor(np.asarray(loss))
    _ensure_finite(out.data, "softmax_xent")

    def pull(g, e=e, denom=denom, y=y, B=B):
        gz = e / denom
        gz[np.arange(B), y] -= 1.0
        return gz * (g / B)

    return _record_op(out, [(logits, pull)])


# --- backward --------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Replay the tape that produced ``loss``, accumulating gradients.

    The seed gradient is 1.  Every tracked tensor reachable from the loss gets
    its gradient populated; unreachable tensors keep ``grad is None``.  The
    tape is consumed: a second backward on it raises EmptyTape.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    _replay(loss, np.ones_like(loss.data))


def backward_from(output: Tensor, out_grad) -> None:
    """Replay a tape seeding ``output`` with an externally supplied gradient.

    Used at stage boundaries when a downstream consumer hands back the
    gradient of this stage's output (synchronised pipeline backward).
    """
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != output.shape:
        raise DimensionMismatch(
            f"seed gradient shape {g.shape} does not match output {output.shape}")
    _ensure_finite(g, "backward_from seed")
    _replay(output, g)


def _replay(seed_t: Tensor, seed_g: np.ndarray) -> None:
    tape = seed_t._tape
    if tape is None or tape.consumed or not tape.nodes:
        raise EmptyTape("no recorded operations to replay")
    _accumulate(seed_t, seed_g)
    for node in reversed(tape.nodes):
        out_grad = node.out.grad
        if out_grad is None:
            continue  # not on the path to the seed
        for t, fn in node.pulls:
            _accumulate(t, fn(out_grad))
        tape.adjoints_run += 1
    tape.consumed = True
    tape.nodes.clear()

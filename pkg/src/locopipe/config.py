"""Flat key-value experiment configuration.

Grammar: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored.  Unknown keys are rejected rather than ignored so typos
cannot silently fall back to defaults.  ``serialize_config`` writes the
canonical form; parse -> serialize -> parse is the identity.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidValue, ParseError, UnknownKey
from .runtime import RunMode


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a training or simulation run needs.

    ``dataset`` and ``layer_dims`` have no defaults; every other key falls
    back to the values below.  ``profile_*`` keys describe an abstract cost
    profile and are only consulted by the simulate/gantt paths.
    """

    # dataset
    dataset: str = ""                      # blobs | spirals | idx (required)
    n_per_class: int = 100
    classes: int = 2
    dim: int = 2
    spread: float = 0.5
    noise: float = 0.08
    idx_train_images: str | None = None
    idx_train_labels: str | None = None
    idx_test_images: str | None = None
    idx_test_labels: str | None = None

    # model / pipeline
    layer_dims: tuple[int, ...] = ()       # required
    stages: int = 1
    buffer_capacity: int = 2
    aux_depth_max: int = 2                 # depth of the first stage's aux head
    aux_depth_interval: int = 3            # stages per one-step depth decrease
    aux_hidden_width: int | None = None    # None: block output width

    # training
    batch_size: int = 32
    epochs: int = 1
    lr0: float = 0.01
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 42
    modes: tuple[RunMode, ...] = (RunMode.E2E, RunMode.NAIVE_PP, RunMode.PPLL)
    sleep_padding: tuple[float, ...] = (0.0,)
    comm_padding: float = 0.0

    # cost-model profile (simulate / gantt subcommands)
    profile_f: tuple[float, ...] | None = None
    profile_b: tuple[float, ...] | None = None
    profile_u: tuple[float, ...] | None = None
    profile_aux_f: tuple[float, ...] | None = None
    profile_aux_b: tuple[float, ...] | None = None
    profile_aux_u: tuple[float, ...] | None = None
    profile_q: float = 0.0
    profile_batches: int = 20


_REQUIRED = ("dataset", "layer_dims")

_MODE_NAMES = {m.value: m for m in RunMode}


def _parse_int(text: str) -> int:
    return int(text, 10)


def _parse_float(text: str) -> float:
    return float(text)


def _parse_str(text: str) -> str:
    return text


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip(), 10) for part in text.split(",") if part.strip())


def _parse_float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in text.split(",") if part.strip())


def _parse_modes(text: str) -> tuple[RunMode, ...]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    modes = []
    for name in names:
        if name not in _MODE_NAMES:
            raise ValueError(f"unknown mode {name!r}, expected one of {sorted(_MODE_NAMES)}")
        modes.append(_MODE_NAMES[name])
    if len(set(modes)) != len(modes):
        raise ValueError("each mode may be listed at most once")
    if not modes:
        raise ValueError("modes list is empty")
    return tuple(modes)


def _fmt_tuple(value) -> str:
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)


def _fmt_modes(value) -> str:
    return ",".join(m.value for m in value)


# key -> (parser, formatter); formatter None means str()
_SCHEMA = {
    "dataset": (_parse_str, None),
    "n_per_class": (_parse_int, None),
    "classes": (_parse_int, None),
    "dim": (_parse_int, None),
    "spread": (_parse_float, repr),
    "noise": (_parse_float, repr),
    "idx_train_images": (_parse_str, None),
    "idx_train_labels": (_parse_str, None),
    "idx_test_images": (_parse_str, None),
    "idx_test_labels": (_parse_str, None),
    "layer_dims": (_parse_int_tuple, _fmt_tuple),
    "stages": (_parse_int, None),
    "buffer_capacity": (_parse_int, None),
    "aux_depth_max": (_parse_int, None),
    "aux_depth_interval": (_parse_int, None),
    "aux_hidden_width": (_parse_int, None),
    "batch_size": (_parse_int, None),
    "epochs": (_parse_int, None),
    "lr0": (_parse_float, repr),
    "lr_min": (_parse_float, repr),
    "momentum": (_parse_float, repr),
    "weight_decay": (_parse_float, repr),
    "seed": (_parse_int, None),
    "modes": (_parse_modes, _fmt_modes),
    "sleep_padding": (_parse_float_tuple, _fmt_tuple),
    "comm_padding": (_parse_float, repr),
    "profile_f": (_parse_float_tuple, _fmt_tuple),
    "profile_b": (_parse_float_tuple, _fmt_tuple),
    "profile_u": (_parse_float_tuple, _fmt_tuple),
    "profile_aux_f": (_parse_float_tuple, _fmt_tuple),
    "profile_aux_b": (_parse_float_tuple, _fmt_tuple),
    "profile_aux_u": (_parse_float_tuple, _fmt_tuple),
    "profile_q": (_parse_float, repr),
    "profile_batches": (_parse_int, None),
}


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.dataset not in ("blobs", "spirals", "idx"):
        raise InvalidValue(f"dataset must be blobs, spirals, or idx, got {cfg.dataset!r}")
    if len(cfg.layer_dims) < 2 or any(d < 1 for d in cfg.layer_dims):
        raise InvalidValue(f"layer_dims needs >= 2 positive entries, got {cfg.layer_dims}")
    if cfg.dataset == "idx" and not (cfg.idx_train_images and cfg.idx_train_labels):
        raise InvalidValue("dataset idx needs idx_train_images and idx_train_labels")
    positive = ("n_per_class", "classes", "dim", "stages", "buffer_capacity",
                "aux_depth_interval", "batch_size", "epochs", "profile_batches")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise InvalidValue(f"{name} must be >= 1, got {getattr(cfg, name)}")
    non_negative = ("spread", "noise", "aux_depth_max", "lr0", "lr_min",
                    "weight_decay", "comm_padding", "profile_q")
    for name in non_negative:
        if getattr(cfg, name) < 0:
            raise InvalidValue(f"{name} must be >= 0, got {getattr(cfg, name)}")
    if not 0.0 <= cfg.momentum < 1.0:
        raise InvalidValue(f"momentum must lie in [0, 1), got {cfg.momentum}")
    if cfg.lr_min > cfg.lr0:
        raise InvalidValue(f"lr_min {cfg.lr_min} exceeds lr0 {cfg.lr0}")
    if cfg.aux_hidden_width is not None and cfg.aux_hidden_width < 1:
        raise InvalidValue("aux_hidden_width must be >= 1 when given")
    if any(p < 0 for p in cfg.sleep_padding):
        raise InvalidValue("sleep_padding entries must be >= 0")
    if cfg.stages > len(cfg.layer_dims) - 1:
        raise InvalidValue(
            f"stages = {cfg.stages} exceeds the {len(cfg.layer_dims) - 1} layers "
            f"of layer_dims {cfg.layer_dims}")


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse config text into a validated ExperimentConfig."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise UnknownKey(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise InvalidValue(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    for key in _REQUIRED:
        if key not in values:
            raise InvalidValue(f"missing required key {key!r}")
    cfg = ExperimentConfig(**values)
    _validate(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Parse a config file by path."""
    return parse_config_text(Path(path).read_text())


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form (schema order, one key per line, no None keys)."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        _, fmt = _SCHEMA[f.name]
        if fmt is not None:
            text = fmt(value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"

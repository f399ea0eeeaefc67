"""Exception types shared across the package.

Everything raised on purpose derives from :class:`LocopipeError` so callers
can catch the whole family with one clause.
"""


class LocopipeError(Exception):
    """Base class for all package-specific errors."""


# --- tensors / autodiff ---------------------------------------------------

class DimensionMismatch(LocopipeError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(LocopipeError):
    """An operation produced (or was handed) NaN or infinite values."""


class LabelOutOfRange(LocopipeError):
    """A class label falls outside [0, num_classes)."""


class NotScalar(LocopipeError):
    """A scalar was required (e.g. a loss value) but the tensor has size > 1."""


class EmptyTape(LocopipeError):
    """backward() was called with no recorded operations to replay."""


class MissingGradient(LocopipeError):
    """An optimizer step found a parameter without a populated gradient."""


class StepOutOfRange(LocopipeError):
    """Schedule step index outside [0, total_steps]."""


# --- model building -------------------------------------------------------

class TooManyStages(LocopipeError):
    """Requested more pipeline stages than the network has layers."""


class ConfigMismatch(LocopipeError):
    """Modules, partition plan, or dataset disagree with each other."""


# --- pipeline runtime -----------------------------------------------------

class PushAfterClose(LocopipeError):
    """push() on a closed buffer."""


class WorkerPanic(LocopipeError):
    """A stage worker raised; carries the failing stage index."""

    def __init__(self, stage_index: int, message: str = ""):
        self.stage_index = stage_index
        super().__init__(f"stage {stage_index} worker failed: {message}")


class ZeroDuration(LocopipeError):
    """Throughput requested over a non-positive time span."""


# --- cost model -----------------------------------------------------------

class EmptyProfiles(LocopipeError):
    """A cost computation needs at least one stage profile."""


class InvalidMode(LocopipeError):
    """Unrecognised execution mode."""


class EmptyEvents(LocopipeError):
    """A schedule rendering needs at least one event."""


# --- data ingest ----------------------------------------------------------

class InvalidArg(LocopipeError):
    """A generator or iterator argument is out of range."""


class BadMagic(LocopipeError):
    """An IDX file does not start with the expected magic number."""


class CountMismatch(LocopipeError):
    """Image and label files disagree on the number of records."""


class TruncatedFile(LocopipeError):
    """An IDX file ends before its declared payload."""


# --- config / harness -----------------------------------------------------

class ParseError(LocopipeError):
    """Config text is syntactically malformed."""


class UnknownKey(LocopipeError):
    """Config contains a key outside the documented schema."""


class InvalidValue(LocopipeError):
    """Config value failed type conversion or validation."""


class IoError(LocopipeError):
    """Filesystem output could not be written."""

"""Exception types shared across the toolkit."""


class NrtError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(NrtError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ValidationError(NrtError, ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(NrtError, ValueError):
    """A model/run configuration is internally inconsistent."""


class GradientUsageError(NrtError, RuntimeError):
    """Misuse of reverse-mode differentiation (non-scalar output, no tape)."""


class TrainingDiverged(NrtError, RuntimeError):
    """Loss became non-finite; carries the epoch and batch where it happened."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class DataFormatError(NrtError, ValueError):
    """Base class for dataset/stencil parse failures."""


class IdxMagicError(DataFormatError):
    """An IDX file does not start with the expected magic number."""


class IdxCountError(DataFormatError):
    """Image and label IDX files disagree on the item count."""


class IdxTruncatedError(DataFormatError):
    """An IDX file ends before the declared payload."""


class ModelLoadError(NrtError, RuntimeError):
    """Base class for model-file load failures."""


class ModelFormatError(ModelLoadError):
    """Bad magic bytes or a malformed header."""


class ModelVersionError(ModelLoadError):
    """Unsupported format version; names both versions."""

    def __init__(self, found: int, supported: int):
        super().__init__(f"model file has format version {found}, "
                         f"this build supports version {supported}")
        self.found = found
        self.supported = supported


class ModelChecksumError(ModelLoadError):
    """Stored checksum does not match the file contents."""


class TruncatedModelError(ModelLoadError):
    """Model file ends before the declared payload."""


class DegenerateDataError(NrtError, ValueError):
    """Input data carries no usable variance (for example, all points equal)."""

"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and
CheckpointError -> 3, TrainingDivergedError -> 4.
"""


class IganError(Exception):
    """Base class for all package errors."""


class ShapeError(IganError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(IganError):
    """Invalid configuration value or malformed config file."""


class ContractError(IganError):
    """An operation was called outside its documented contract."""


class DegenerateBatchError(ContractError):
    """Batch statistics are undefined (train-mode batchnorm on a single item)."""


class DataError(IganError):
    """Dataset ingestion failure."""


class IdxMagicError(DataError):
    """IDX file does not start with the expected magic number."""


class IdxTruncatedError(DataError):
    """IDX payload is shorter than the header declares."""


class IdxCountMismatchError(DataError):
    """Image and label files declare different item counts."""


class CheckpointError(IganError):
    """Checkpoint file is unreadable or inconsistent."""


class CheckpointMagicError(CheckpointError):
    """Checkpoint does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ends in the middle of a record."""


class CheckpointNameCollisionError(CheckpointError):
    """Checkpoint contains two records with the same name."""


class TrainingDivergedError(IganError):
    """A loss term became non-finite during training."""

    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite value in loss term '{term}' at step {step}")
        self.term = term
        self.step = step


class ArtifactConflictError(IganError):
    """Refusing to overwrite an existing artifact with different content."""

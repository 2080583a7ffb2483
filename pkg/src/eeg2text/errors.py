"""Exception hierarchy shared across the pipeline."""


class Eeg2TextError(Exception):
    """Base class for all package errors."""


class FormatError(Eeg2TextError):
    """Corpus file violates the on-disk format (bad magic, version, schema)."""


class IoError(Eeg2TextError):
    """Filesystem problem while reading or writing an artifact."""


class IntegrityError(Eeg2TextError):
    """Blob content inconsistent with its own header or the manifest."""


class DataError(Eeg2TextError):
    """Data values violate an invariant (NaN samples, empty corpus)."""


class SplitError(Eeg2TextError):
    """Not enough unique sentences to form train/val/test."""


class SubjectError(Eeg2TextError):
    """Subject id not present in the learned subject table."""


class LengthError(Eeg2TextError):
    """Sequence longer than the positional table allows."""


class VocabError(Eeg2TextError):
    """Token id outside the vocabulary."""


class ShapeError(Eeg2TextError):
    """Tensor shape does not match the model contract."""


class LossError(Eeg2TextError):
    """Loss undefined for the given inputs (e.g. all positions masked)."""


class AlignError(Eeg2TextError):
    """Stage-1 target rows cannot be aligned with the EEG word sequence."""


class NumericsError(Eeg2TextError):
    """Non-finite value encountered during a numeric check."""


class MetricError(Eeg2TextError):
    """Metric undefined for the given corpus (e.g. empty candidate list)."""


class ConfigError(Eeg2TextError):
    """Invalid or conflicting run configuration."""

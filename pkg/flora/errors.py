"""
Flora error hierarchy
=====================

Three branches, one per CLI exit code:
- ConfigError  → exit 1 (usage)
- DataError    → exit 2 (bad or missing input files)
- NumericError → exit 3 (numeric failure during training/inference)

Every class carries a stable `code` string used by the CLI and tests.
"""


class FloraError(Exception):
    """Base class for every error raised by flora"""

    code = "flora_error"
    exit_code = 1


# ============= USAGE =============

class ConfigError(FloraError):
    code = "config_error"
    exit_code = 1


# ============= DATA =============

class DataError(FloraError):
    code = "data_error"
    exit_code = 2


class BadMagicError(DataError):
    code = "bad_magic"


class VersionMismatchError(DataError):
    code = "version_mismatch"


class BadKindError(DataError):
    code = "bad_kind"


class TruncatedPayloadError(DataError):
    code = "truncated_payload"


class TrailingBytesError(DataError):
    code = "trailing_bytes"


class NonFinitePayloadError(DataError):
    code = "non_finite_payload"


class InvalidPackError(DataError):
    code = "invalid_pack"


class SplitError(DataError):
    code = "split_error"


class SplitOverlapError(SplitError):
    code = "split_overlap"


class SplitRangeError(SplitError):
    code = "split_out_of_range"


class SplitDuplicateError(SplitError):
    code = "split_duplicate"


class CheckpointError(DataError):
    code = "checkpoint_mismatch"


class MissingInputError(DataError):
    code = "missing_input"


# ============= NUMERIC =============

class NumericError(FloraError):
    code = "numeric_error"
    exit_code = 3


class ShapeError(NumericError):
    code = "shape_mismatch"


class TapeError(NumericError):
    code = "tape_error"


class NonFiniteError(NumericError):
    code = "non_finite"


class FrozenModelError(NumericError):
    code = "not_frozen"


class EmptyBatchError(NumericError):
    code = "empty_batch"


class EmptyCandidateError(NumericError):
    code = "empty_candidates"

"""Error categories raised across the pipeline.

Each class carries a human-readable ``category`` that the CLI prints
verbatim in front of the message.
"""


class SnarecastError(Exception):
    category = "error"


class SchemaError(SnarecastError):
    """A required column is missing or the header does not match."""

    category = "schema error"


class ValidationError(SnarecastError):
    """A value violates its contract (range, type, finiteness)."""

    category = "validation error"


class DuplicationError(SnarecastError):
    """A (grid_id, season) key or unlabeled grid_id appears twice."""

    category = "duplication error"


class ConfigError(SnarecastError):
    category = "config error"


class ParameterError(SnarecastError):
    category = "parameter error"


class CoverageError(SnarecastError):
    """Two structures that must cover the same cell set do not."""

    category = "coverage error"


class CompletenessError(SnarecastError):
    """A score sheet is missing one or more cluster rows."""

    category = "completeness error"


class AugmentationError(SnarecastError):
    category = "augmentation error"


class TrainingError(SnarecastError):
    category = "training error"


class DivergenceError(SnarecastError):
    category = "divergence error"


class ShapeError(SnarecastError):
    category = "shape error"


class FileError(SnarecastError):
    category = "file error"

"""
Exception hierarchy for the CCN package.

Every error raised on purpose by the package derives from CCNError so the
CLI can map it to an exit code in one place.
"""

from typing import Optional


# ==============================================================================
# BASE
# ==============================================================================

class CCNError(Exception):
    """Base exception for all CCN errors"""

    exit_code: int = 2


class UsageError(CCNError):
    """Bad command line usage"""

    exit_code = 1


class ConfigError(CCNError):
    """Configuration file or override failed validation"""

    exit_code = 2


# ==============================================================================
# DATA
# ==============================================================================

class DatasetError(CCNError):
    """Base exception for dataset problems"""

    exit_code = 2


class RecordParseError(DatasetError):
    """A dataset line could not be parsed"""

    def __init__(self, line: int, field: str, message: str):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: field '{field}': {message}")


class PageValidationError(DatasetError):
    """A parsed page violates an ImpressionPage invariant"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class SingleClassError(DatasetError):
    """AUC requested for labels of a single class"""
    pass


# ==============================================================================
# MODEL / CHECKPOINT
# ==============================================================================

class CheckpointError(CCNError):
    """Base exception for checkpoint I/O"""

    exit_code = 2


class CheckpointVersionError(CheckpointError):
    """Checkpoint header names an unsupported format version"""
    pass


class CorruptCheckpointError(CheckpointError):
    """Checkpoint container is truncated or unreadable"""
    pass


class SchemaMismatchError(CheckpointError):
    """Checkpoint schema does not match the expected feature schema"""

    def __init__(self, field: str, expected, found):
        self.field = field
        super().__init__(
            f"schema mismatch on '{field}': expected {expected!r}, found {found!r}"
        )


class UnknownFamilyError(CCNError):
    """Embedding lookup for a feature family the tables do not hold"""

    def __init__(self, family: str):
        self.family = family
        super().__init__(f"unknown feature family '{family}'")


class VariantError(CCNError):
    """Operation not supported by the model variant"""

    exit_code = 2


# ==============================================================================
# NUMERICS
# ==============================================================================

class GraphError(CCNError):
    """Base exception for computation graph misuse"""

    exit_code = 3


class ShapeError(GraphError):
    """Operand shapes are inconsistent with the op kind"""

    def __init__(self, node: str, message: str):
        self.node = node
        super().__init__(f"node {node}: {message}")


class UnboundInputError(GraphError):
    """A named graph input has no bound value"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"input '{name}' is not bound")


class BackwardError(GraphError):
    """Backward pass requested on an invalid root or before forward"""
    pass


class NumericError(CCNError):
    """Non-finite loss, divergence or failed gradient check"""

    exit_code = 3


class ImportanceWeightError(NumericError):
    """Importance weights requested for an empty degree list"""
    pass


class PriorUndefinedError(CCNError):
    """Pair-label prior is undefined for the dataset statistics"""

    exit_code = 2

"""Exception hierarchy shared by every module.

The CLI maps ConfigError to exit code 2 and DataError to exit code 3;
everything else is a programming error and surfaces as a traceback.
"""


class MdgraphError(Exception):
    """Base class for all package errors."""


class ShapeError(MdgraphError):
    """Operand dimensions do not conform."""


class ConfigError(MdgraphError):
    """Invalid configuration value or combination."""


class ContractError(MdgraphError):
    """An internal call violated an API contract (e.g. non-scalar loss)."""


class PreconditionError(MdgraphError):
    """A documented operation precondition does not hold."""


class DataError(MdgraphError):
    """Problem with input data files or their contents."""


class ParseError(DataError):
    """Malformed line in a data file; message names file and line."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class BoundsError(DataError):
    """Edge references a node id outside the feature matrix."""


class TaskError(MdgraphError):
    """A few-shot task cannot be formed (e.g. every class was dropped)."""


class StageError(MdgraphError):
    """An experiment stage failed; names the stage and seed, keeps the
    original error as __cause__ so the CLI can map exit codes."""

    def __init__(self, stage, seed, cause):
        super().__init__(f"stage {stage!r} failed (seed {seed}): {cause}")
        self.stage = stage
        self.seed = seed


class CheckpointError(MdgraphError):
    """Checkpoint file is corrupt, truncated, or version-mismatched."""

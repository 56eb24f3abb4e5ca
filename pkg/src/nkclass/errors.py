"""Exception types shared across the package.

The CLI maps these onto exit codes: ParameterError -> 2 (usage),
DataError -> 3 (bad input data), PipelineError -> 4 (stage failure).
"""


class ParameterError(ValueError):
    """An argument value is outside the operation's domain."""


class DataError(ValueError):
    """Input data (file, stream, tree) violates the expected schema."""


class ModelFormatError(DataError):
    """A serialized model is truncated, corrupted, or schema-invalid."""


class InvariantError(RuntimeError):
    """An internal model invariant was violated (e.g. negative radicand)."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; message carries the stage name."""

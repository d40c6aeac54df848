"""Error taxonomy shared by all modules.

Every error carries a stable machine-readable ``category`` string; the CLI
prints it on stderr so callers can dispatch without parsing messages.
"""


class AuheadError(Exception):
    category = "error"


class SchemaError(AuheadError):
    """Malformed file layout: missing columns, wrong field counts, bad header."""

    category = "schema"


class DataError(AuheadError):
    """Well-formed input with out-of-contract values (e.g. AU intensity > 5)."""

    category = "data"


class ShapeError(AuheadError):
    """Array shape / frame-count / width mismatch between paired inputs."""

    category = "shape"


class ConfigError(AuheadError):
    """Invalid configuration value or unknown configuration key."""

    category = "config"


class PreconditionError(AuheadError):
    """A required prior artifact (checkpoint, trained model) is missing."""

    category = "precondition"


class DegenerateInputError(AuheadError):
    """Geometrically degenerate input, e.g. all alignment points coincident."""

    category = "degenerate"


class InvariantError(AuheadError):
    """A structural invariant was violated (e.g. overlapping landmark partition)."""

    category = "invariant"


class TrainingFault(AuheadError):
    """Non-finite loss or other unrecoverable failure during optimization."""

    category = "training"

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path

"""Exception types shared across the package.

Every error carries a short machine-readable ``category`` so the CLI can
emit a single parseable line on stderr.
"""


class CrossfuseError(Exception):
    category = "error"


class FormatError(CrossfuseError):
    """Malformed file: bad magic, truncated payload, unparseable record."""

    category = "format"


class ValidationError(CrossfuseError):
    """Input violates a documented invariant (duplicate ids, NaN, dim mismatch...)."""

    category = "validation"


class ConfigError(CrossfuseError):
    """Bad configuration value or missing required option."""

    category = "config"


class TrainingDiverged(CrossfuseError):
    """Non-finite loss during training; carries the state at failure."""

    category = "divergence"

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError/ConfigError -> 3,
NumericalError -> 4 (usage errors exit 2 via argparse).
"""


class ShgtError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ShgtError):
    """Invalid corpus content, dataset invariant violation, or bad artifact file."""


class ConfigError(ShgtError):
    """Malformed or inconsistent configuration."""


class NumericalError(ShgtError):
    """Non-finite value produced by the numerical pipeline.

    `stage` names the pipeline stage that faulted so the failure is
    attributable from the CLI.
    """

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage

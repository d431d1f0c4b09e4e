"""Exception types shared across the pipeline."""


class InputError(ValueError):
    """Malformed or inconsistent input (shapes, ranges, schema)."""


class IllConditionedError(RuntimeError):
    """Raised when a least-squares system is rank deficient.

    ``bands`` lists the SH band names that dominate the near-null space.
    """

    def __init__(self, message, bands=(), condition=float("inf")):
        super().__init__(message)
        self.bands = list(bands)
        self.condition = condition


class FitDivergedError(RuntimeError):
    """Offset fitting blew up; ``trace`` holds the objective history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class UndefinedMetricWarning(UserWarning):
    """A metric was requested over an empty region."""


class DatasetError(RuntimeError):
    """A dataset file is missing or corrupt; the message names the frame."""

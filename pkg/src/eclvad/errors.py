"""Exception types shared across the package."""


class EclvadError(Exception):
    """Base class for all package-specific errors."""


class FormatError(EclvadError):
    """A serialized blob does not match the expected wire format."""


class TruncationError(FormatError):
    """A byte source ended before the declared payload was complete."""

    def __init__(self, what, expected, actual):
        self.expected = int(expected)
        self.actual = int(actual)
        super().__init__(f"truncated {what}: expected {expected} bytes, got {actual}")


class DataError(EclvadError):
    """Payload values violate an invariant (non-finite, wrong range)."""


class ConfigError(EclvadError):
    """A spec/config object is invalid or an operation pairing is unsupported."""


class CapacityError(ConfigError):
    """The per-task budget collapsed to zero for the current task count."""

    def __init__(self, total_budget, task_index):
        self.total_budget = int(total_budget)
        self.task_index = int(task_index)
        super().__init__(
            f"per-task budget floor({total_budget}/{task_index}) is zero; "
            f"total budget S={total_budget} cannot support task i={task_index}"
        )


class MetricError(EclvadError):
    """A metric is undefined for the given inputs (e.g. a single class)."""


class NumericError(EclvadError):
    """A numeric routine failed (factorization, overflow) with context."""

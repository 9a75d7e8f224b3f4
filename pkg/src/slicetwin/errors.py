"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """A scenario or component parameter violates its contract."""


class AggregationError(RuntimeError):
    """A federated aggregation round cannot be completed."""


class InvariantViolation(AssertionError):
    """An engine-level invariant (capacity, conservation) failed mid-run.

    These indicate simulator bugs, never legitimate scenario outcomes.
    """

"""Exception types shared across blockflow modules."""


class BlockflowError(Exception):
    """Base class for all blockflow errors."""


class GridFormatError(BlockflowError):
    """Malformed grid file (bad header, bad dims, coordinate mismatch)."""


class MetricError(BlockflowError):
    """Invalid grid metrics, e.g. an inverted (non-positive volume) cell."""


class NonPhysicalStateError(BlockflowError):
    """A flow state decoded or produced with rho <= 0 or p <= 0."""


class DecompositionError(BlockflowError):
    """Decomposition cannot satisfy its constraints (np < npb, thin slices...)."""


class TopologyError(BlockflowError):
    """Inconsistent boundary connectivity (unmatched or non-bijective pairs)."""


class DeadlockError(BlockflowError):
    """Exchange made no progress within the timeout.

    Carries the set of (rank, boundary) waits that were blocked when the
    timeout fired.
    """

    def __init__(self, message, blocked=None):
        super().__init__(message)
        self.blocked = tuple(blocked or ())


class DivergenceError(BlockflowError):
    """Residual grew beyond the divergence guard during iteration."""


class ConfigError(BlockflowError):
    """Invalid run configuration or config file."""

"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, anything else -> 4.
"""


class StcausalError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(StcausalError):
    """Invalid configuration value or malformed run configuration."""


class DataError(StcausalError):
    """Malformed or inconsistent input data (CSV, panel, graph files)."""


class DuplicateRowError(DataError):
    """A (location, time) pair appears more than once in the input."""


class UnbalancedPanelError(DataError):
    """Locations do not share an identical time index range."""


class ZeroVarianceError(DataError):
    """A variable has no variance, so it cannot be standardized."""


class EmptyDesignError(DataError):
    """No complete-case rows survive the design construction."""


class SingularSystemError(StcausalError):
    """A ridge system with zero penalty is singular; advise a positive penalty."""


class DegenerateStatisticError(StcausalError):
    """Residual products have zero variance; the test statistic is undefined."""


class AlignmentError(StcausalError):
    """Residual vectors do not share the same (location, time) row keys."""


class GraphStructureError(StcausalError):
    """A graph violates a structural precondition (cycles, undirected edges,
    missing nodes, or anti-temporal orientation)."""


class SimulationError(StcausalError):
    """A generator failed (divergent trajectories, extinction, bad spec)."""

"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericalError -> 3, InfeasibleError -> 4.
"""


class VoltgridError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VoltgridError):
    """Invalid configuration, scenario file or input file."""


class ModelError(ConfigError):
    """Network data violates a model invariant (disconnected, bad branch...)."""


class NumericalError(VoltgridError):
    """A numerical procedure failed (divergence, singularity, rank loss)."""


class LoadFlowError(NumericalError):
    """Newton-Raphson load flow did not converge."""

    def __init__(self, message: str, max_mismatch: float | None = None,
                 iterations: int | None = None):
        super().__init__(message)
        self.max_mismatch = max_mismatch
        self.iterations = iterations


class EstimationError(NumericalError):
    """Estimation failure, e.g. rank-deficient information matrix."""


class InfeasibleError(VoltgridError):
    """The dispatch problem has no feasible point."""

    def __init__(self, message: str, worst_row: str | None = None,
                 violation: float | None = None):
        super().__init__(message)
        self.worst_row = worst_row
        self.violation = violation

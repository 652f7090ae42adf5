"""Exception types shared across the package."""


class FrescoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FrescoError):
    """Invalid or inconsistent configuration / input files."""


class RowError(ConfigurationError):
    """A single malformed row in an input file."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DomainError(FrescoError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UnstableQueue(FrescoError):
    """Offered load saturates a queue (U >= 1 or bw_util >= bw_total).

    Raised by the analytic models instead of returning an infinite latency so
    callers can prune the candidate.
    """

    def __init__(self, stage: str, utilization: float):
        super().__init__(f"{stage} queue unstable (U={utilization:.4f})")
        self.stage = stage
        self.utilization = utilization


class LedgerError(FrescoError):
    """A contract call was rejected; ledger state is unchanged."""

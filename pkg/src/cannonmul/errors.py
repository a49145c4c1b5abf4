"""Exception types shared across the package."""


class CannonError(Exception):
    """Base class for all package errors."""


class ContractViolation(CannonError):
    """An operation was called with arguments that violate its preconditions."""


class GridIncompatibility(ContractViolation):
    """Matrix order is not divisible by the grid side."""

    def __init__(self, n: int, q: int):
        super().__init__(
            f"matrix order n={n} is not divisible by grid side q={q}; "
            f"pass a compatible size or pad the matrix first"
        )
        self.n = n
        self.q = q


class ConfigError(CannonError):
    """Invalid run configuration (bad grid, bad host file, bad flags). CLI exit code 2."""


class TransportError(CannonError):
    """Connection setup failure, peer disconnect, or transfer timeout. Fatal to the run."""


class ProtocolError(TransportError):
    """Wire-level disagreement: bad magic, tag mismatch, stale epoch, size mismatch."""


class GangAborted(CannonError):
    """This worker was told to abandon the current attempt (collective abort)."""

    def __init__(self, failing_rank=None, reason=None, detail=""):
        msg = "gang aborted"
        if failing_rank is not None:
            msg += f" (failing rank {failing_rank})"
        if reason is not None:
            msg += f" reason={reason}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.failing_rank = failing_rank
        self.reason = reason


class GangFailure(CannonError):
    """All restart attempts exhausted. CLI exit code 3."""

    def __init__(self, attempts: int, cause):
        super().__init__(f"gang failed after {attempts} attempt(s): {cause}")
        self.attempts = attempts
        self.cause = cause


class AnalysisError(CannonError):
    """Report set does not cover what the analysis needs."""


class VerificationError(CannonError):
    """Computed product disagrees with the reference oracle. CLI exit code 4."""

"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class FuzzyMPCError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(FuzzyMPCError, ValueError):
    pass


class AllZeroWeights(FuzzyMPCError, ValueError):
    pass


class PremiseOutOfRange(FuzzyMPCError, ValueError):
    """A premise falls outside the validity region of a restricted fuzzy model."""


class MissingGain(FuzzyMPCError, KeyError):
    pass


class BufferUnderflow(FuzzyMPCError, IndexError):
    pass


class DisturbanceBoundViolation(FuzzyMPCError, ValueError):
    pass


class InvalidHyperparams(FuzzyMPCError, ValueError):
    pass


class NonSymmetricAssembly(FuzzyMPCError, AssertionError):
    pass


class SingularX(FuzzyMPCError, ValueError):
    pass


class SingularSchurPivot(FuzzyMPCError, ValueError):
    pass


class NumericalFailure(FuzzyMPCError, RuntimeError):
    pass


class InfeasibleSynthesis(FuzzyMPCError):
    """Raised when the synthesis LMIs have no strictly feasible point.

    ``failed_families`` names the inequality families whose best-effort
    margins stayed non-negative; ``best_effort`` holds the gain set that
    minimises the worst margin, so callers can still inspect it.
    """

    def __init__(self, message, *, subsystem=None, failed_families=(), margins=None,
                 hyperparams=None, best_effort=None):
        super().__init__(message)
        self.subsystem = subsystem
        self.failed_families = tuple(failed_families)
        self.margins = dict(margins or {})
        self.hyperparams = hyperparams
        self.best_effort = best_effort


class CoordinationStateStale(FuzzyMPCError, RuntimeError):
    pass


class HorizonMismatch(FuzzyMPCError, ValueError):
    pass


class NoConvergence(FuzzyMPCError, RuntimeError):
    """The interaction-prediction loop hit its iteration cap.

    The best iterate is attached so a caller can still use it.
    """

    def __init__(self, message, *, gains=None, report=None, trajectory=None):
        super().__init__(message)
        self.gains = gains
        self.report = report
        self.trajectory = trajectory

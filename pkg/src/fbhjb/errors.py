"""Exception hierarchy shared by every solver and checker."""

from __future__ import annotations


class FbhjbError(Exception):
    """Base class. ``module`` names the raising module for CLI messages."""

    module = "fbhjb"


class ConfigError(FbhjbError):
    module = "config"


class InvalidConstants(FbhjbError):
    module = "core"


class AssumptionGateError(FbhjbError):
    """A solver was asked to run while the standing assumptions fail."""

    module = "core"


class SolverError(FbhjbError):
    """Numerical failure inside a solver (exit status 3 in the CLI)."""


class NonContractive(SolverError):
    module = "algebra"

    def __init__(self, message: str, index=None, q: float | None = None):
        super().__init__(message)
        self.index = index
        self.q = q


class MaxIterations(SolverError):
    module = "algebra"


class MissingFeed(SolverError):
    module = "paths"


class SingularRegression(SolverError):
    module = "paths"


class CflViolation(SolverError):
    module = "paths"

    def __init__(self, message: str, bound: float | None = None, module: str | None = None):
        super().__init__(message)
        self.bound = bound
        if module is not None:
            self.module = module


class PicardDiverged(SolverError):
    module = "fbsde"

    def __init__(self, message: str, gap_history=()):
        super().__init__(message)
        self.gap_history = list(gap_history)


class MaxPicard(SolverError):
    module = "fbsde"

    def __init__(self, message: str, gap_history=()):
        super().__init__(message)
        self.gap_history = list(gap_history)


class InterpolationOutOfBounds(SolverError):
    module = "value"


class NumericalBlowup(SolverError):
    module = "hjb"


class ResolutionError(SolverError):
    module = "verify"


class NotLipschitz(SolverError):
    module = "verify"


class GradientTooLarge(SolverError):
    module = "verify"

"""Shared exception types.

Every failure the library raises deliberately goes through one of these, so
callers (and the CLI exit-code mapping) can tell input mistakes from runtime
breakdowns without string matching.
"""

from __future__ import annotations

__all__ = [
    "ModuleError",
    "NonHermitianInput",
    "NotPositiveDefinite",
    "DimensionMismatch",
    "GridTooCoarse",
    "InvalidModulus",
    "NonZeroMean",
    "UnstableTimestep",
    "UnknownTag",
    "PresentationMismatch",
    "NotAProjection",
    "RankTooSmall",
    "TraceNotNormalized",
    "Infeasible",
    "NoConvergence",
    "EpsilonOutOfRange",
    "KTooLarge",
    "NotRankTwo",
    "ConfigParse",
]


class ModuleError(Exception):
    """Base class for all deliberate failures raised by this package."""


class NonHermitianInput(ModuleError, ValueError):
    """A matrix (or batch entry) expected to be Hermitian is not."""


class NotPositiveDefinite(ModuleError, ValueError):
    """A matrix expected to be Hermitian positive definite is not."""


class DimensionMismatch(ModuleError, ValueError):
    """Array shapes or ranks do not line up."""


class GridTooCoarse(ModuleError, ValueError):
    """Requested resolution is below the supported minimum."""


class InvalidModulus(ModuleError, ValueError):
    """Torus modulus does not lie in the upper half plane."""


class NonZeroMean(ModuleError, ValueError):
    """Source handed to the Poisson solver has a nonzero weighted mean."""


class UnstableTimestep(ModuleError, RuntimeError):
    """Explicit time stepping exceeded its stability budget."""


class UnknownTag(ModuleError, KeyError):
    """Catalog lookup with a tag that names no presentation."""


class PresentationMismatch(ModuleError, ValueError):
    """Fields built over different presentations were combined."""


class NotAProjection(ModuleError, ValueError):
    """Endomorphism field fails the projection identities."""


class RankTooSmall(ModuleError, ValueError):
    """Operation needs a higher rank than the presentation has."""


class TraceNotNormalized(ModuleError, ValueError):
    """Metric determinant normalization required but absent."""


class Infeasible(ModuleError, RuntimeError):
    """No conformal factor can reach the requested sign condition."""


class NoConvergence(ModuleError, RuntimeError):
    """Iterative solver exhausted its budget without meeting tolerance."""


class EpsilonOutOfRange(ModuleError, ValueError):
    """Continuity parameter outside the supported interval."""


class KTooLarge(ModuleError, ValueError):
    """Induced-bundle order exceeds the rank it is built from."""


class NotRankTwo(ModuleError, ValueError):
    """Second Chern bookkeeping is only defined for rank two samples."""


class ConfigParse(ModuleError, ValueError):
    """Run configuration file is malformed."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        if line is not None:
            where = f"line {line}" if col is None else f"line {line}, col {col}"
            message = f"{where}: {message}"
        super().__init__(message)
        self.line = line
        self.col = col

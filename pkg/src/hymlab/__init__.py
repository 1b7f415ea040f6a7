"""Numerical laboratory for Hermitian metric flows on holomorphic bundles.

The package evolves Hermitian metrics on model bundles over the projective
line and over flat complex tori, tracks curvature eigenvalue statistics along
the way, and checks the structural predictions (monotonicity, conservation,
slope bounds) as executable properties.

Layout:

* :mod:`hymlab.hermitian` -- batched fiberwise matrix primitives.
* :mod:`hymlab.manifolds` -- discretized base curves, integration, Poisson.
* :mod:`hymlab.bundles` -- presentations, metrics, curvature, spectra.
* :mod:`hymlab.flow` -- the metric evolution and its monitors.
* :mod:`hymlab.continuity` -- the perturbed-equation path follower.
* :mod:`hymlab.hn` -- exact slope combinatorics for induced bundles.
* :mod:`hymlab.chern` -- pointwise second Chern form bookkeeping.
* :mod:`hymlab.acceptance` -- the acceptance checks behind `hymlab validate`.
* :mod:`hymlab.cli` -- command line front end.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigParse,
    DimensionMismatch,
    EpsilonOutOfRange,
    GridTooCoarse,
    Infeasible,
    InvalidModulus,
    KTooLarge,
    ModuleError,
    NoConvergence,
    NonHermitianInput,
    NonZeroMean,
    NotAProjection,
    NotPositiveDefinite,
    NotRankTwo,
    PresentationMismatch,
    RankTooSmall,
    TraceNotNormalized,
    UnknownTag,
    UnstableTimestep,
)

__all__ = [
    "__version__",
    "ConfigParse",
    "DimensionMismatch",
    "EpsilonOutOfRange",
    "GridTooCoarse",
    "Infeasible",
    "InvalidModulus",
    "KTooLarge",
    "ModuleError",
    "NoConvergence",
    "NonHermitianInput",
    "NonZeroMean",
    "NotAProjection",
    "NotPositiveDefinite",
    "NotRankTwo",
    "PresentationMismatch",
    "RankTooSmall",
    "TraceNotNormalized",
    "UnknownTag",
    "UnstableTimestep",
]

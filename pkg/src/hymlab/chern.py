"""Pointwise Chern-form algebra for surface curvature samples.

A sample is the value of a curvature (1,1)-form at one point of a
complex surface: a 2x2 array of fiber blocks together with the base
metric at that point. The characteristic-class combination
2 c2 - c1^2/2 is evaluated literally through the determinant expansion,
the competing side through trace-free block norms, and the two must
agree as top-form coefficients. The eigenvalue-gap identity and the
positivity report from the rank-2 argument live here too.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotRankTwo, TraceNotNormalized

__all__ = [
    "CurvatureSample",
    "random_curvature_sample",
    "c2_gap_residual",
    "two_eigen_gap",
    "c2_positivity_run",
]

_HERM_TOL = 1e-12


@dataclass(frozen=True)
class CurvatureSample:
    """Curvature coefficients and base metric at a surface point.

    ff[a, b] is the fiber block multiplying dz^a wedge dzbar^b; the pair
    structure ff[a, b]^dagger = ff[b, a] makes sqrt(-1) times the form
    Hermitian. metric is the 2x2 positive base metric in the same frame.
    """

    ff: np.ndarray
    metric: np.ndarray

    def __post_init__(self):
        ff = np.asarray(self.ff, dtype=complex)
        g = np.asarray(self.metric, dtype=complex)
        if ff.ndim != 4 or ff.shape[:2] != (2, 2) or ff.shape[2] != ff.shape[3]:
            raise DimensionMismatch(
                f"curvature blocks must be (2, 2, r, r), got {ff.shape}")
        if g.shape != (2, 2):
            raise DimensionMismatch(f"base metric must be 2x2, got {g.shape}")
        scale = max(float(np.abs(ff).max()), 1.0)
        for a in range(2):
            for b in range(2):
                if np.abs(ff[a, b].conj().T - ff[b, a]).max() > _HERM_TOL * scale:
                    raise DimensionMismatch(
                        "blocks lack the Hermitian pair symmetry")
        if np.abs(g.conj().T - g).max() > _HERM_TOL * max(
                float(np.abs(g).max()), 1.0) or np.linalg.eigvalsh(g)[0] <= 0:
            raise DimensionMismatch("base metric must be Hermitian positive")
        object.__setattr__(self, "ff", ff)
        object.__setattr__(self, "metric", g)

    @property
    def rank(self):
        return self.ff.shape[2]


def random_curvature_sample(rng, rank=2, scale=1.0, metric=None):
    """Random sample with dyadic coefficients, exactly float-representable."""

    def herm(r):
        a = rng.integers(-16, 17, size=(r, r)) / 16.0
        b = rng.integers(-16, 17, size=(r, r)) / 16.0
        m = a + 1j * b
        return 0.5 * (m + m.conj().T)

    r = rank
    ff = np.zeros((2, 2, r, r), dtype=complex)
    ff[0, 0] = scale * herm(r)
    ff[1, 1] = scale * herm(r)
    off = scale * (rng.integers(-16, 17, size=(r, r)) / 16.0
                   + 1j * rng.integers(-16, 17, size=(r, r)) / 16.0)
    ff[0, 1] = off
    ff[1, 0] = off.conj().T
    if metric is None:
        metric = np.eye(2)
    return CurvatureSample(ff=ff, metric=metric)


def _orthonormal_blocks(sample):
    # change base coordinates so the metric becomes the identity; the
    # blocks transform with the inverse Cholesky factor on both slots
    c = np.linalg.cholesky(sample.metric)
    cinv = np.linalg.inv(c)
    return np.einsum("ac,cdij,bd->abij", cinv, sample.ff, cinv.conj())


def _wedge_coeff(fa, fb):
    # coefficient of the volume form in tr(A wedge B) for (1,1)-forms with
    # blocks in an orthonormal frame; dz1 dz1b dz2 dz2b = -vol
    return -np.trace(
        fa[0, 0] @ fb[1, 1] + fa[1, 1] @ fb[0, 0]
        - fa[0, 1] @ fb[1, 0] - fa[1, 0] @ fb[0, 1]).real


def c2_gap_residual(sample):
    """Defect of the surface identity tying 2c2 - c1^2/2 to trace-free data.

    The left side runs through the honest determinant expansion of the
    total Chern form (so the fiber-trace parts enter and must cancel),
    the right side through Hilbert-Schmidt norms of the trace-free
    blocks minus the norm of their base contraction. Both are reported
    as multiples of the volume form; returns the absolute difference.

    The trace-channel cancellation is a rank-2 phenomenon: at rank r
    with a nonzero fiber trace the residual equals |1/2 - 1/r| times
    the wedge square of the trace form, and only traceless samples
    close the identity at every rank.

    Raises:
        DimensionMismatch: propagated from sample validation.
    """
    ff = _orthonormal_blocks(sample)
    r = sample.rank
    # 4 pi^2 (2 c2 - c1^2 / 2) = tr(F ^ F) - tr(F) ^ tr(F) / 2
    tr_blocks = np.trace(ff, axis1=2, axis2=3)
    scalar = tr_blocks[..., None, None] * np.eye(1)
    lhs = _wedge_coeff(ff, ff) - 0.5 * _wedge_coeff(scalar, scalar)
    perp = ff - (tr_blocks / r)[..., None, None] * np.eye(r)
    hs = float((np.abs(perp) ** 2).sum())
    contracted = perp[0, 0] + perp[1, 1]
    rhs = hs - float(np.trace(contracted @ contracted).real)
    return abs(lhs - rhs)


def two_eigen_gap(lam1, lam2):
    """Both routes to the trace-normalized eigenvalue product.

    Returns (2 - (lam1-1)^2 - (lam2-1)^2, 2*lam1*lam2); the identity
    makes them equal whenever the eigenvalues sum to 2.

    Raises:
        TraceNotNormalized: the pair does not sum to 2.
    """
    if abs(lam1 + lam2 - 2.0) > 1e-9:
        raise TraceNotNormalized(
            f"eigenvalue pair must sum to 2, got {lam1 + lam2!r}")
    return (2.0 - (lam1 - 1.0) ** 2 - (lam2 - 1.0) ** 2, 2.0 * lam1 * lam2)


def c2_positivity_run(lam):
    """Positivity report for a field of normalized eigenvalue pairs.

    Args:
        lam: array (..., 2) of pointwise eigenvalue pairs with sum 2,
            top first.

    Returns:
        dict with the field minima, the positivity verdict (the bottom
        eigenvalue stays positive everywhere), and the implied lower
        bound coefficient min(lam1*lam2)/(16 pi^2) on the second Chern
        form against omega^2.

    Raises:
        NotRankTwo: last axis is not a pair.
        TraceNotNormalized: some pair does not sum to 2.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.ndim < 1 or lam.shape[-1] != 2:
        raise NotRankTwo(f"need eigenvalue pairs, got shape {lam.shape}")
    if np.abs(lam.sum(axis=-1) - 2.0).max() > 1e-9:
        raise TraceNotNormalized("pairs must sum to 2 pointwise")
    top = lam[..., 0]
    bottom = lam[..., 1]
    product_min = float((top * bottom).min())
    return {
        "min_top": float(top.min()),
        "min_bottom": float(bottom.min()),
        "positive": bool(bottom.min() > 0.0),
        "bound_coefficient": product_min / (16.0 * np.pi**2),
    }

"""Bundle presentations, Hermitian metrics, and curvature statistics.

A presentation packages the combinatorial data of a model bundle over a
discretized base curve: rank, the gluing across the seam (diagonal monomial
transitions on the projective line, constant automorphy factors on the
torus), and a distinguished base metric. Metrics and endomorphism fields are
lists of chart arrays with fiber indices trailing, exactly like scalar
fields with two extra axes.

Curvature convention. The mean curvature of a metric H is

    theta(H) = -(2/g) d_zbar(H^{-1} d_z H),

which is H-self-adjoint up to discretization error; the computed field is
symmetrized in the H inner product so downstream spectral code sees an
exactly self-adjoint operator. A conformal change multiplies in the scalar
operator with a minus sign: theta(e^f H) = theta(H) - laplacian(f) Id.
Degrees integrate tr(theta)/(2 pi); the Fubini-Study metric on the diagonal
presentations reproduces theta = 2d exactly in the continuum.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Infeasible,
    KTooLarge,
    NotAProjection,
    PresentationMismatch,
    UnknownTag,
)
from .hermitian import adjoint, herm_eig_desc, herm_part

logger = logging.getLogger(__name__)

__all__ = [
    "BundlePresentation",
    "catalog_bundle",
    "catalog_tags",
    "base_metric",
    "initial_metric",
    "mean_curvature",
    "chern_connection",
    "spectrum_field",
    "SpectrumStats",
    "spectrum_stats",
    "running_spectrum_stats",
    "degree",
    "hym_lambda",
    "endo_sup_norm_sq",
    "subsheaf_degree",
    "projection_check",
    "conformal_scale",
    "conformal_negativize",
    "dual_presentation",
    "dual_metric",
    "induced_presentation",
    "induced_metric",
    "induced_curvature",
    "scalar_modes",
    "hom_modes",
]

_TAG_SUM = re.compile(r"^O\((-?\d+)\)(\+O\((-?\d+)\))*$")


@dataclass
class BundlePresentation:
    """Gluing data for a model bundle over a discretized curve."""

    tag: str
    manifold: object
    rank: int
    kind: str  # cp1_split | torus_diag | torus_atiyah
    degrees: tuple = ()
    signs: tuple = ()
    automorphy: tuple = ()
    limit_spectrum: tuple = ()
    band_metric_factor: list = field(default_factory=list)
    band_endo_factor: list = field(default_factory=list)

    automorphy_inv: tuple = ()

    def __post_init__(self):
        if self.kind == "cp1_split":
            for c, chart in enumerate(self.manifold.charts):
                zeta = chart.coord.ravel()[chart.band_flat]
                t = np.stack(
                    [s * zeta ** (-d) for d, s in zip(self.degrees, self.signs)],
                    axis=-1)
                tc = np.conj(t)
                self.band_metric_factor.append(tc[:, :, None] * t[:, None, :])
                self.band_endo_factor.append(t[:, None, :] / t[:, :, None])
        else:
            self.automorphy_inv = tuple(np.linalg.inv(a) for a in self.automorphy)

    # ---------------- seam / periodicity plumbing ----------------

    def refresh_metric(self, h):
        if self.kind != "cp1_split":
            return [arr.copy() for arr in h]
        return self.manifold.refresh(
            h, transform=lambda c, v: v * self.band_metric_factor[c])

    def refresh_endo(self, phi):
        if self.kind != "cp1_split":
            return [arr.copy() for arr in phi]
        return self.manifold.refresh(
            phi, transform=lambda c, v: v * self.band_endo_factor[c])

    def _wrap_slice(self, ndim, axis, step):
        sl = [slice(None)] * ndim
        sl[axis] = -1 if step > 0 else 0
        return tuple(sl)

    def shift_metric(self, arr, axis, step):
        """Grid shift with the metric periodicity rule H(z + period) = A^{-*} H A^{-1}."""
        out = np.roll(arr, -step, axis=axis)
        if self.kind == "cp1_split":
            return out
        a = self.automorphy[axis]
        ainv = self.automorphy_inv[axis]
        sl = self._wrap_slice(arr.ndim, axis, step)
        if step > 0:
            out[sl] = adjoint(ainv) @ out[sl] @ ainv
        else:
            out[sl] = adjoint(a) @ out[sl] @ a
        return out

    def shift_endo(self, arr, axis, step):
        """Grid shift with the endomorphism rule phi(z + period) = A phi A^{-1}."""
        out = np.roll(arr, -step, axis=axis)
        if self.kind == "cp1_split":
            return out
        a = self.automorphy[axis]
        ainv = self.automorphy_inv[axis]
        sl = self._wrap_slice(arr.ndim, axis, step)
        if step > 0:
            out[sl] = a @ out[sl] @ ainv
        else:
            out[sl] = ainv @ out[sl] @ a
        return out


def catalog_tags():
    """Tags understood by catalog_bundle, with grammar notes."""
    return {
        "O(d)": "line bundle of degree d on the projective line",
        "O(a)+O(b)+...": "direct sum of line bundles on the projective line",
        "T": "holomorphic tangent bundle of the projective line",
        "flat(r)": "trivially glued rank r bundle on the torus",
        "atiyah": "nonsplit rank 2 extension of the trivial line bundle (torus)",
    }


def catalog_bundle(manifold, tag):
    """Look up a model presentation by tag over the given base.

    Raises:
        UnknownTag: tag outside the catalog grammar.
        PresentationMismatch: tag valid but for the other base kind.
    """
    tag = tag.strip()
    if _TAG_SUM.match(tag):
        if manifold.kind != "cp1":
            raise PresentationMismatch(f"tag {tag!r} needs a projective-line base")
        degrees = tuple(int(d) for d in re.findall(r"O\((-?\d+)\)", tag))
        return BundlePresentation(
            tag=tag, manifold=manifold, rank=len(degrees), kind="cp1_split",
            degrees=degrees, signs=(1.0,) * len(degrees),
            limit_spectrum=tuple(sorted((2.0 * d for d in degrees), reverse=True)))
    if tag == "T":
        if manifold.kind != "cp1":
            raise PresentationMismatch("tag 'T' needs a projective-line base")
        return BundlePresentation(
            tag=tag, manifold=manifold, rank=1, kind="cp1_split",
            degrees=(2,), signs=(-1.0,), limit_spectrum=(4.0,))
    m_flat = re.match(r"^flat\((\d+)\)$", tag)
    if m_flat:
        if manifold.kind != "torus":
            raise PresentationMismatch(f"tag {tag!r} needs a torus base")
        r = int(m_flat.group(1))
        if r < 1:
            raise UnknownTag(f"flat rank must be positive, got {r}")
        eye = np.eye(r, dtype=np.complex128)
        return BundlePresentation(
            tag=tag, manifold=manifold, rank=r, kind="torus_diag",
            automorphy=(eye, eye.copy()), limit_spectrum=(0.0,) * r)
    if tag == "atiyah":
        if manifold.kind != "torus":
            raise PresentationMismatch("tag 'atiyah' needs a torus base")
        a1 = np.eye(2, dtype=np.complex128)
        at = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=np.complex128)
        return BundlePresentation(
            tag=tag, manifold=manifold, rank=2, kind="torus_atiyah",
            automorphy=(a1, at), limit_spectrum=(0.0, 0.0))
    raise UnknownTag(f"no catalog entry for tag {tag!r}")


# ---------------- metrics ----------------

def base_metric(pres):
    """The distinguished background metric of a presentation.

    Fubini-Study powers on split presentations; the identity on trivially
    glued torus bundles; for the nonsplit torus extension a quadratic
    unipotent profile compatible with the automorphy factors.
    """
    m = pres.manifold
    r = pres.rank
    out = []
    for chart in m.charts:
        if pres.kind == "cp1_split":
            base = 1.0 + np.abs(chart.coord) ** 2
            h = np.zeros(chart.coord.shape + (r, r), dtype=np.complex128)
            for k, d in enumerate(pres.degrees):
                h[..., k, k] = base ** (-d)
        elif pres.kind == "torus_diag":
            h = np.broadcast_to(np.eye(r, dtype=np.complex128),
                                chart.coord.shape + (r, r)).copy()
        else:
            # (1 - t N)* (1 - t N) with N the nilpotent part of the tau factor
            t = chart.coord.imag / pres.manifold.tau.imag
            h = np.zeros(chart.coord.shape + (2, 2), dtype=np.complex128)
            h[..., 0, 0] = 1.0
            h[..., 0, 1] = -t
            h[..., 1, 0] = -t
            h[..., 1, 1] = 1.0 + t * t
        out.append(h)
    return out


def scalar_modes(pres, max_power=2):
    """Real global scalar functions usable as conformal generators."""
    m = pres.manifold
    out = []
    if m.kind == "torus":
        axis = (np.arange(m.n) + 0.5) * m.h
        s, t = np.meshgrid(axis, axis, indexing="ij")
        for k1, k2 in ((1, 0), (0, 1), (1, 1), (2, 1)):
            out.append([np.cos(2.0 * np.pi * (k1 * s + k2 * t))])
            out.append([np.sin(2.0 * np.pi * (k1 * s + k2 * t))])
        return out
    for mm in range(1, max_power + 1):
        for j in range(0, mm + 1):
            for part in (np.real, np.imag):
                if j == 0 and part is np.imag:
                    continue
                f = []
                for chart in m.charts:
                    zc = chart.coord
                    base = (1.0 + np.abs(zc) ** 2) ** mm
                    if chart.index == 0:
                        val = zc**j / base
                    else:
                        val = zc ** (mm - j) * np.conj(zc) ** mm / base
                    f.append(part(val))
                out.append(f)
    return out


def hom_modes(pres, c, max_power=2):
    """Smooth sections of the degree-c line summand morphisms.

    Returns complex scalar fields psi with the transformation rule of a
    morphism between summands differing by degree c; the basis is
    z^j/(1+|z|^2)^m with 0 <= j <= m + c, so every entry is smooth across
    the seam by construction.
    """
    m = pres.manifold
    out = []
    if m.kind == "torus":
        for f in scalar_modes(pres):
            out.append([f[0].astype(np.complex128)])
        return out
    for mm in range(1, max_power + 1):
        for j in range(0, mm + c + 1):
            f = []
            for chart in m.charts:
                zc = chart.coord
                base = (1.0 + np.abs(zc) ** 2) ** mm
                if chart.index == 0:
                    val = zc**j / base
                else:
                    val = zc ** (mm + c - j) * np.conj(zc) ** mm / base
                f.append(val)
            out.append(f)
    return out


def initial_metric(pres, seed=None, amplitude=0.0, off_scale=None):
    """Base metric, optionally distorted by a random smooth gauge move.

    The distortion combines conformal factors on the diagonal (strong
    curvature content, controls the initial contraction size) and a bounded
    off-diagonal morphism mixing the summands. Everything is built from the
    explicit smooth section bases, so the result is transition-compatible
    regardless of amplitude.

    Args:
        pres: presentation.
        seed: rng seed; required when amplitude > 0 for reproducibility.
        amplitude: scale of the diagonal conformal potentials.
        off_scale: sup bound for the off-diagonal mixing; default 0.3.
    """
    h0 = base_metric(pres)
    if amplitude == 0.0:
        return h0
    rng = np.random.default_rng(seed)
    m = pres.manifold
    r = pres.rank
    off_scale = 0.3 if off_scale is None else off_scale
    smodes = scalar_modes(pres)

    def draw_potential():
        u = [np.zeros_like(f) for f in smodes[0]]
        for f in smodes:
            c = rng.standard_normal()
            u = [ua + c * fa for ua, fa in zip(u, f)]
        sup = max(np.abs(ua).max() for ua in u)
        return [ua / max(sup, 1e-30) for ua in u]

    # diagonal conformal part: diag(e^{u/2}) H0 diag(e^{u/2}); the nonsplit
    # extension only admits the scalar move (a general diagonal does not
    # commute with the unipotent automorphy factor)
    if pres.kind == "torus_atiyah":
        shared = draw_potential()
        pots = [shared] * r
    else:
        pots = [draw_potential() for _ in range(r)]
    h = []
    for ci in range(len(m.charts)):
        scale = np.stack([np.exp(0.5 * amplitude * pots[k][ci]) for k in range(r)],
                         axis=-1)
        h.append(h0[ci] * scale[..., :, None] * scale[..., None, :])

    if r > 1 and off_scale > 0.0:
        if pres.kind == "torus_atiyah":
            vmodes = hom_modes(pres, 0)
            pert = [np.zeros((m.n, m.n, 2, 2), dtype=np.complex128)]
            for f in vmodes:
                c = rng.standard_normal() + 1j * rng.standard_normal()
                pert[0][..., 0, 1] += c * f[0]
        else:
            pert = [np.zeros((m.n, m.n, r, r), dtype=np.complex128)
                    for _ in m.charts]
            for i in range(r):
                for j in range(r):
                    if i == j:
                        continue
                    if pres.kind == "cp1_split":
                        c_deg = pres.degrees[i] - pres.degrees[j]
                    else:
                        c_deg = 0
                    modes = hom_modes(pres, c_deg)
                    if not modes:
                        continue
                    for f in modes:
                        c = rng.standard_normal() + 1j * rng.standard_normal()
                        for ci in range(len(m.charts)):
                            pert[ci][..., i, j] += c * f[ci]
        sup = max(np.linalg.norm(p, axis=(-2, -1)).max() for p in pert)
        gain = off_scale / max(sup, 1e-30)
        eye = np.eye(r)
        bs = [eye + gain * p for p in pert]
        h = [adjoint(b) @ arr @ b for b, arr in zip(bs, h)]
    return h


# ---------------- curvature ----------------

def _field_inv(h):
    return [np.linalg.inv(arr) for arr in h]


def chern_connection(pres, h):
    """Connection coefficient H^{-1} d_z H per chart.

    Valid away from chart edges on the projective line (consumers finish
    derivative work before the seam band matters); globally valid on the
    torus through the twisted shifts.
    """
    m = pres.manifold
    h = pres.refresh_metric(h)
    hinv = _field_inv(h)
    out = []
    for ci in range(len(m.charts)):
        dh = m.d_z(h[ci], shift=pres.shift_metric) if m.kind == "torus" else m.d_z(h[ci])
        out.append(hinv[ci] @ dh)
    return out


def mean_curvature(pres, h, symmetrize=True):
    """Contracted curvature theta(H), symmetrized in the H inner product."""
    m = pres.manifold
    h = pres.refresh_metric(h)
    hinv = _field_inv(h)
    out = []
    for ci, chart in enumerate(m.charts):
        if m.kind == "torus":
            dh = m.d_z(h[ci], shift=pres.shift_metric)
            x = hinv[ci] @ dh
            dx = m.d_zbar(x, shift=pres.shift_endo)
        else:
            dh = m.d_z(h[ci])
            x = hinv[ci] @ dh
            dx = m.d_zbar(x)
        theta = -(2.0 / chart.density)[..., None, None] * dx
        if m.kind == "cp1":
            theta = np.where(chart.pde[..., None, None], theta, 0.0)
        out.append(theta)
    if m.kind == "cp1":
        out = pres.refresh_endo(out)
    if symmetrize:
        out = [0.5 * (t + hi @ adjoint(t) @ ha)
               for t, hi, ha in zip(out, hinv, h)]
    return out


def spectrum_field(pres, h, theta=None):
    """Pointwise descending eigenvalues of theta in the H inner product.

    Conjugates by H^{1/2} so the operator handed to the eigensolver is
    exactly Hermitian; for a symmetrized theta this is an exact similarity.
    """
    if theta is None:
        theta = mean_curvature(pres, h)
    h = pres.refresh_metric(h)
    out = []
    for ci in range(len(pres.manifold.charts)):
        vals, vecs = herm_eig_desc(h[ci], check=False)
        sq = np.sqrt(np.maximum(vals, 1e-300))
        shalf = np.einsum("...ik,...k,...jk->...ij", vecs, sq, np.conj(vecs))
        sinv = np.einsum("...ik,...k,...jk->...ij", vecs, 1.0 / sq, np.conj(vecs))
        conj_theta = shalf @ theta[ci] @ sinv
        lam, _ = herm_eig_desc(herm_part(conj_theta), check=False)
        out.append(lam)
    return out


@dataclass
class SpectrumStats:
    """Envelope and mean statistics of the running eigenvalue sums.

    These are the monotone quantities of the flow: position k (0-based)
    refers to the sum of the (k+1) largest eigenvalues for sup_k and
    mean_desc_k, and to the sum of the (k+1) smallest for inf_k and
    mean_asc_k. So mean_desc[0] is the weighted mean of the top eigenvalue
    alone (the feasibility number for conformal negativization), inf[0]
    the grid infimum of the bottom one, and the last positions of
    mean_desc and mean_asc agree exactly: both are the mean of the trace.
    """

    sup: np.ndarray
    inf: np.ndarray
    mean_desc: np.ndarray
    mean_asc: np.ndarray


def running_spectrum_stats(manifold, lam_fields):
    """Statistics of a pointwise descending eigenvalue field.

    sup_k / mean_desc_k act on the running sums taken from the top,
    inf_k / mean_asc_k on the running sums taken from the bottom.
    """
    r = lam_fields[0].shape[-1]
    top = [np.cumsum(arr, axis=-1) for arr in lam_fields]
    bot = [np.cumsum(arr[..., ::-1], axis=-1) for arr in lam_fields]
    sup = np.array([max(float(arr[c.owned][..., k].max())
                        for c, arr in zip(manifold.charts, top))
                    for k in range(r)])
    inf = np.array([min(float(arr[c.owned][..., k].min())
                        for c, arr in zip(manifold.charts, bot))
                    for k in range(r)])
    vol = manifold.volume
    mean_desc = np.array([
        float(np.real(manifold.integrate([a[..., k] for a in top]))) / vol
        for k in range(r)])
    mean_asc = np.array([
        float(np.real(manifold.integrate([a[..., k] for a in bot]))) / vol
        for k in range(r)])
    return SpectrumStats(sup=sup, inf=inf, mean_desc=mean_desc,
                         mean_asc=mean_asc)


def spectrum_stats(pres, h, theta=None):
    lam = spectrum_field(pres, h, theta=theta)
    return running_spectrum_stats(pres.manifold, lam)


def degree(pres, h=None, theta=None):
    """Discrete degree: integral of tr(theta) over 2 pi."""
    if theta is None:
        theta = mean_curvature(pres, h if h is not None else base_metric(pres))
    tr = [np.einsum("...ii", t).real for t in theta]
    return float(pres.manifold.integrate(tr)) / (2.0 * np.pi)


def hym_lambda(pres, h=None):
    """Target constant: 2 pi deg / (rank * volume), from the discrete degree."""
    return 2.0 * np.pi * degree(pres, h=h) / (pres.rank * pres.manifold.volume)


def endo_sup_norm_sq(pres, h, phi):
    """Sup over the owned region of |phi|_H^2 = tr(phi phi^{*H})."""
    h = pres.refresh_metric(h)
    hinv = _field_inv(h)
    vals = []
    for ci, chart in enumerate(pres.manifold.charts):
        adj = hinv[ci] @ adjoint(phi[ci]) @ h[ci]
        nsq = np.einsum("...ij,...ji->...", phi[ci], adj).real
        vals.append(float(nsq[chart.owned].max()))
    return max(vals)


# ---------------- subsheaves ----------------

def projection_check(pres, h, pi, tol=1e-8):
    """Validate pi^2 = pi and H-self-adjointness; returns the defects."""
    h = pres.refresh_metric(h)
    hinv = _field_inv(h)
    idem = max(np.abs(p @ p - p).max() for p in pi)
    sym = max(np.abs(p - hi @ adjoint(p) @ ha).max()
              for p, hi, ha in zip(pi, hinv, h))
    if idem > tol or sym > tol:
        raise NotAProjection(
            f"projection defects: idempotent {idem:.3e}, self-adjoint {sym:.3e}")
    return idem, sym


def subsheaf_degree(pres, h, pi):
    """Chern-Weil degree of the subsheaf cut out by a projection field.

    deg = (1/2pi) [ integral tr(pi theta) - integral |dbar pi|^2 ], with the
    (0,1)-form norm carrying the 2/g metric factor. The correction term is
    nonnegative, so curves of projections that fail to be holomorphic are
    charged for it.
    """
    projection_check(pres, h, pi)
    m = pres.manifold
    h = pres.refresh_metric(h)
    hinv = _field_inv(h)
    theta = mean_curvature(pres, h)
    pi = pres.refresh_endo(pi)
    first = [np.einsum("...ij,...ji->...", p, t).real for p, t in zip(pi, theta)]
    second = []
    for ci, chart in enumerate(m.charts):
        if m.kind == "torus":
            b = m.d_zbar(pi[ci], shift=pres.shift_endo)
        else:
            b = m.d_zbar(pi[ci])
        badj = hinv[ci] @ adjoint(b) @ h[ci]
        nsq = (2.0 / chart.density) * np.einsum("...ij,...ji->...", b, badj).real
        if m.kind == "cp1":
            nsq = np.where(chart.pde, nsq, 0.0)
        second.append(nsq)
    if m.kind == "cp1":
        second = m.refresh(second)
    val = m.integrate(first) - m.integrate(second)
    return float(val) / (2.0 * np.pi)


# ---------------- conformal moves ----------------

def conformal_scale(pres, h, f):
    """Multiply a metric by e^f for a real scalar field f."""
    return [arr * np.exp(fa)[..., None, None] for arr, fa in zip(h, f)]


def conformal_negativize(pres, h):
    """Push the top curvature eigenvalue below zero by a conformal move.

    Solves laplacian(f) = (top eigenvalue field) - (its weighted mean) and
    returns (new metric, f, achieved sup). Feasible exactly when the mean of
    the top eigenvalue is negative; the achieved sup is that mean up to
    discretization error.

    Raises:
        Infeasible: mean of the top eigenvalue is >= 0, or the discrete
            margin is too thin for the correction to land strictly below 0.
    """
    m = pres.manifold
    lam = spectrum_field(pres, h)
    top = [arr[..., 0] for arr in lam]
    stats = spectrum_stats(pres, h)
    target = stats.mean_desc[0]
    if stats.sup[0] < 0.0:
        return [arr.copy() for arr in h], m.zero_field(), stats.sup[0]
    if target >= 0.0:
        raise Infeasible(
            f"mean of the top eigenvalue is {target:.6f} >= 0; no conformal "
            "factor can make the curvature negative")
    rho = [t - target for t in top]
    if m.kind == "cp1":
        rho = [np.where(c.pde, r, 0.0) for c, r in zip(m.charts, rho)]
        rho = m.refresh(rho)
    shift = m.mean(rho)
    rho = [r - shift for r in rho]
    f = m.poisson_solve(rho)
    new_h = conformal_scale(pres, h, f)
    achieved = spectrum_stats(pres, new_h).sup[0]
    if achieved >= 0.0:
        raise Infeasible(
            f"margin too thin at this resolution: mean {target:.3e} but the "
            f"corrected sup is {achieved:.3e}")
    return new_h, f, achieved


# ---------------- duals and induced bundles ----------------

def dual_presentation(pres):
    if pres.kind == "cp1_split":
        return BundlePresentation(
            tag=f"dual[{pres.tag}]", manifold=pres.manifold, rank=pres.rank,
            kind="cp1_split", degrees=tuple(-d for d in pres.degrees),
            signs=pres.signs,
            limit_spectrum=tuple(sorted((-v for v in pres.limit_spectrum),
                                        reverse=True)))
    a1, at = pres.automorphy
    inv_t = lambda a: np.conj(np.linalg.inv(a)).astype(np.complex128)
    return BundlePresentation(
        tag=f"dual[{pres.tag}]", manifold=pres.manifold, rank=pres.rank,
        kind=pres.kind, automorphy=(inv_t(a1), inv_t(at)),
        limit_spectrum=tuple(sorted((-v for v in pres.limit_spectrum),
                                    reverse=True)))


def dual_metric(h):
    """Metric induced on the dual bundle: conjugate of the inverse."""
    return [np.conj(np.linalg.inv(arr)) for arr in h]


def _sym_basis(r, k):
    idx = []

    def rec(start, cur):
        if len(cur) == k:
            idx.append(tuple(cur))
            return
        for i in range(start, r):
            rec(i, cur + [i])

    rec(0, [])
    return idx


def _ext_basis(r, k):
    idx = []

    def rec(start, cur):
        if len(cur) == k:
            idx.append(tuple(cur))
            return
        for i in range(start, r):
            rec(i + 1, cur + [i])

    rec(0, [])
    return idx


def _tensor_index(multi, r):
    out = 0
    for i in multi:
        out = out * r + i
    return out


def _permutations(seq):
    if len(seq) <= 1:
        yield tuple(seq), 1
        return
    for i, x in enumerate(seq):
        rest = seq[:i] + seq[i + 1 :]
        for perm, sign in _permutations(rest):
            yield (x,) + perm, sign * (-1) ** i


def induced_embedding(r, k, op):
    """Isometric embedding of the symmetric or alternating power into the
    k-fold tensor power; columns indexed by the ordered basis."""
    if k < 1:
        raise KTooLarge(f"power k = {k} must be at least 1")
    if op == "sym":
        basis = _sym_basis(r, k)
    elif op == "ext":
        if k > r:
            raise KTooLarge(f"alternating power k = {k} exceeds rank {r}")
        basis = _ext_basis(r, k)
    else:
        raise UnknownTag(f"induced operation {op!r} not one of sym/ext")
    p = np.zeros((r**k, len(basis)), dtype=np.complex128)
    for col, multi in enumerate(basis):
        if op == "sym":
            seen = {}
            for perm, _ in _permutations(list(multi)):
                seen[perm] = seen.get(perm, 0) + 1
            total = sum(seen.values())
            for perm, cnt in seen.items():
                p[_tensor_index(perm, r), col] += cnt
            p[:, col] /= np.sqrt(
                total * math.prod(math.factorial(v) for v in
                                  np.bincount(multi, minlength=r)))
        else:
            for perm, sign in _permutations(list(multi)):
                p[_tensor_index(perm, r), col] += sign
            p[:, col] /= np.sqrt(math.factorial(k))
    return p


def _kron_field(a, b):
    ra = a.shape[-1]
    rb = b.shape[-1]
    out = np.einsum("...ij,...kl->...ikjl", a, b)
    return out.reshape(a.shape[:-2] + (ra * rb, ra * rb))


def induced_presentation(pres, op, k=1):
    """Presentation of dual/end/sym^k/ext^k with matching conventions."""
    if op == "dual":
        return dual_presentation(pres)
    if pres.kind != "cp1_split":
        if pres.kind == "torus_diag":
            pass
        else:
            raise PresentationMismatch(
                "induced constructions on the nonsplit torus bundle are not wired")
    if op == "end":
        if pres.kind == "cp1_split":
            degs = tuple(a - b for a in pres.degrees for b in pres.degrees)
            signs = tuple(sa * sb for sa in pres.signs for sb in pres.signs)
            return BundlePresentation(
                tag=f"end[{pres.tag}]", manifold=pres.manifold,
                rank=pres.rank**2, kind="cp1_split", degrees=degs, signs=signs,
                limit_spectrum=tuple(sorted(
                    (a - b for a in pres.limit_spectrum for b in pres.limit_spectrum),
                    reverse=True)))
        r = pres.rank
        eye = np.eye(r * r, dtype=np.complex128)
        return BundlePresentation(
            tag=f"end[{pres.tag}]", manifold=pres.manifold, rank=r * r,
            kind="torus_diag", automorphy=(eye, eye.copy()),
            limit_spectrum=(0.0,) * (r * r))
    if op in ("sym", "ext"):
        if pres.rank < 1 or (op == "ext" and k > pres.rank):
            raise KTooLarge(f"{op}^{k} undefined at rank {pres.rank}")
        basis = _sym_basis(pres.rank, k) if op == "sym" else _ext_basis(pres.rank, k)
        if pres.kind == "cp1_split":
            degs = tuple(sum(pres.degrees[i] for i in multi) for multi in basis)
            signs = tuple(
                float(np.prod([pres.signs[i] for i in multi])) for multi in basis)
            spec = tuple(sorted(
                (sum(pres.limit_spectrum[i] for i in multi) for multi in basis),
                reverse=True))
            return BundlePresentation(
                tag=f"{op}{k}[{pres.tag}]", manifold=pres.manifold,
                rank=len(basis), kind="cp1_split", degrees=degs, signs=signs,
                limit_spectrum=spec)
        eye = np.eye(len(basis), dtype=np.complex128)
        return BundlePresentation(
            tag=f"{op}{k}[{pres.tag}]", manifold=pres.manifold, rank=len(basis),
            kind="torus_diag", automorphy=(eye, eye.copy()),
            limit_spectrum=(0.0,) * len(basis))
    raise UnknownTag(f"induced operation {op!r} unknown")


def induced_metric(pres, h, op, k=1):
    """Metric on the induced bundle, pointwise from fiber multilinear algebra."""
    if op == "dual":
        return dual_metric(h)
    if op == "end":
        hd = dual_metric(h)
        return [_kron_field(a, b) for a, b in zip(h, hd)]
    if op in ("sym", "ext"):
        p = induced_embedding(pres.rank, k, op)
        out = []
        for arr in h:
            big = arr
            for _ in range(k - 1):
                big = _kron_field(big, arr)
            out.append(np.conj(p).T @ big @ p)
        return out
    raise UnknownTag(f"induced operation {op!r} unknown")


def induced_curvature(pres, theta, op, k=1):
    """Curvature of the induced metric by fiberwise composition.

    Pointwise laws: dual gets minus the transpose in the dual frame, End is
    the difference of actions, powers sum over slots then compress through
    the isometric embedding. These avoid re-running stencils, so algebraic
    identities hold to fiber-arithmetic precision.
    """
    r = pres.rank
    if op == "dual":
        return [-np.swapaxes(t, -1, -2) for t in theta]
    if op == "end":
        eye = np.eye(r)
        dual = [-np.swapaxes(t, -1, -2) for t in theta]
        return [_kron_field(t, np.broadcast_to(eye, t.shape))
                + _kron_field(np.broadcast_to(eye, t.shape), d)
                for t, d in zip(theta, dual)]
    if op in ("sym", "ext"):
        p = induced_embedding(r, k, op)
        eye = np.broadcast_to(np.eye(r), theta[0].shape)
        out = []
        for t in theta:
            total = None
            for slot in range(k):
                factors = [t if i == slot else eye for i in range(k)]
                term = factors[0]
                for fct in factors[1:]:
                    term = _kron_field(term, fct)
                total = term if total is None else total + term
            out.append(np.conj(p).T @ total @ p)
        return out
    raise UnknownTag(f"induced operation {op!r} unknown")

"""Batched fiberwise Hermitian linear algebra.

Everything downstream works pointwise on small Hermitian matrices attached to
grid points, so the primitives here all accept stacked input: an array of
shape ``(..., r, r)`` is a batch of r x r fibers and operations vectorize over
the leading axes. Ranks stay in single digits; the eigensolver is a cyclic
Jacobi iteration, chosen because it is deterministic (fixed sweep order, no
environment-dependent branching) rather than for large-matrix speed. LAPACK
drivers are deliberately not used here so the independent oracles in the test
suite mean something.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonHermitianInput, NotPositiveDefinite

__all__ = [
    "herm_check",
    "herm_part",
    "herm_eig_desc",
    "mat_exp_herm",
    "mat_log_pd",
    "mat_sqrt_pd",
    "mat_pow_pd",
    "psi_bar",
    "psi_bar_apply",
    "weighted_hadamard",
    "tau_sort",
    "cond_number",
]

HERMITIAN_RTOL = 1e-10
_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 60
_SERIES_CUTOFF = 1e-5
_LOG_GUARD = 500.0


def _as_square(a):
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square fibers, got shape {a.shape}")
    return a


def adjoint(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def herm_part(a):
    """Hermitian part (a + a*)/2 over the last two axes."""
    a = _as_square(a)
    return 0.5 * (a + adjoint(a))


def herm_check(a, rtol=HERMITIAN_RTOL, what="matrix"):
    """Validate Hermitian symmetry of a fiber batch.

    Args:
        a: array (..., r, r).
        rtol: allowed deviation relative to the largest entry magnitude.
        what: noun used in the error message.

    Returns:
        The input as complex128, exactly symmetrized.

    Raises:
        NonHermitianInput: if any batch entry deviates beyond tolerance.
    """
    a = _as_square(a)
    dev = np.abs(a - adjoint(a)).max() if a.size else 0.0
    scale = max(np.abs(a).max() if a.size else 0.0, 1.0)
    if dev > rtol * scale:
        raise NonHermitianInput(
            f"{what} is not Hermitian: max |A - A*| = {dev:.3e} (scale {scale:.3e})"
        )
    return herm_part(a)


def _jacobi_t(tau):
    # smaller-magnitude root of t^2 + 2 tau t - 1 = 0, with t(0) = +1
    denom = np.abs(tau) + np.sqrt(1.0 + tau * tau)
    return np.where(tau >= 0.0, 1.0, -1.0) / denom


def herm_eig_desc(a, check=True):
    """Eigendecomposition of a batch of Hermitian fibers.

    Cyclic Jacobi with a fixed (p, q) sweep order, vectorized over the batch.
    Eigenvalues come back descending; columns of the vector factor are the
    matching orthonormal eigenvectors, so ``a == u @ diag(vals) @ u*``.

    Args:
        a: array (..., r, r), Hermitian along the last two axes.
        check: validate Hermitian symmetry first.

    Returns:
        (vals, vecs): shapes (..., r) real and (..., r, r) complex.
    """
    a = herm_check(a, what="eigensolver input") if check else herm_part(_as_square(a))
    batch_shape = a.shape[:-2]
    r = a.shape[-1]
    w = a.reshape(-1, r, r).copy()
    n = w.shape[0]
    u = np.broadcast_to(np.eye(r, dtype=np.complex128), (n, r, r)).copy()

    if r == 1:
        vals = w[:, 0, 0].real.reshape(batch_shape + (1,))
        return vals, u.reshape(batch_shape + (1, 1))

    scale = np.abs(w).max(axis=(1, 2))
    scale = np.maximum(scale, np.finfo(float).tiny)
    rows = np.arange(n)

    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.zeros(n)
        for p in range(r - 1):
            for q in range(p + 1, r):
                off += np.abs(w[:, p, q]) ** 2
        if np.all(np.sqrt(off) <= _JACOBI_TOL * scale):
            break
        for p in range(r - 1):
            for q in range(p + 1, r):
                apq = w[:, p, q]
                mag = np.abs(apq)
                act = mag > _JACOBI_TOL * scale * 1e-2
                if not act.any():
                    continue
                idx = rows[act]
                m = mag[idx]
                phase = apq[idx] / m
                app = w[idx, p, p].real
                aqq = w[idx, q, q].real
                t = _jacobi_t((aqq - app) / (2.0 * m))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                sp = s * phase
                # right multiply w by J = [[c, s phase], [-s conj(phase), c]]
                wp = w[idx, :, p]
                wq = w[idx, :, q]
                w[idx, :, p] = c[:, None] * wp - np.conj(sp)[:, None] * wq
                w[idx, :, q] = sp[:, None] * wp + c[:, None] * wq
                # left multiply by J*
                rp = w[idx, p, :]
                rq = w[idx, q, :]
                w[idx, p, :] = c[:, None] * rp - sp[:, None] * rq
                w[idx, q, :] = np.conj(sp)[:, None] * rp + c[:, None] * rq
                w[idx, p, q] = 0.0
                w[idx, q, p] = 0.0
                up = u[idx, :, p]
                uq = u[idx, :, q]
                u[idx, :, p] = c[:, None] * up - np.conj(sp)[:, None] * uq
                u[idx, :, q] = sp[:, None] * up + c[:, None] * uq

    vals = np.einsum("nii->ni", w).real.copy()
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    u = np.take_along_axis(u, order[:, None, :], axis=2)
    return vals.reshape(batch_shape + (r,)), u.reshape(batch_shape + (r, r))


def _recombine(vals, vecs):
    return np.einsum("...ik,...k,...jk->...ij", vecs, vals, np.conj(vecs))


def mat_exp_herm(a, check=True):
    """exp of a Hermitian fiber batch, via eigendecomposition."""
    vals, vecs = herm_eig_desc(a, check=check)
    return _recombine(np.exp(vals), vecs)


def _pd_vals(a, what):
    vals, vecs = herm_eig_desc(a, check=True)
    top = np.maximum(vals[..., 0], 0.0)
    floor = 1e-14 * np.maximum(top, 1.0)
    if np.any(vals[..., -1] <= floor):
        worst = float(vals[..., -1].min())
        raise NotPositiveDefinite(f"{what}: smallest eigenvalue {worst:.3e}")
    return vals, vecs


def mat_log_pd(a):
    """log of a Hermitian positive definite fiber batch."""
    vals, vecs = _pd_vals(a, "matrix log")
    return _recombine(np.log(vals), vecs)


def mat_sqrt_pd(a):
    """Principal square root of a Hermitian positive definite batch."""
    vals, vecs = _pd_vals(a, "matrix sqrt")
    return _recombine(np.sqrt(vals), vecs)


def mat_pow_pd(a, exponent):
    """Real power of a Hermitian positive definite batch."""
    vals, vecs = _pd_vals(a, "matrix power")
    return _recombine(vals**exponent, vecs)


def psi_bar(x, y):
    """Divided-difference kernel (e^(y-x) - 1)/(y - x).

    Defined by continuity as 1 on the diagonal; evaluated through a series
    near it so the value stays smooth to rounding. Inputs broadcast.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    small = np.abs(d) < _SERIES_CUTOFF
    ds = np.where(small, d, 0.0)
    series = 1.0 + ds / 2.0 + ds**2 / 6.0 + ds**3 / 24.0 + ds**4 / 120.0 + ds**5 / 720.0
    dn = np.where(small, 1.0, d)
    with np.errstate(over="ignore"):
        normal = np.expm1(dn) / dn
    out = np.where(small, series, normal)
    if out.ndim == 0:
        return float(out)
    return out


def weighted_hadamard(mu_left, mu_right, b):
    """Entrywise product W o b with W[i, j] = psi_bar(mu_left[i], mu_right[j]).

    Overflow-guarded: where the kernel value overflows a double but the
    matching entry of ``b`` is exactly zero, the product is zero, which is the
    limit the surrounding calculus needs. Nonzero entries against an
    overflowing weight go through log space and saturate honestly at inf.

    Args:
        mu_left: (..., r) kernel first arguments, indexed by row.
        mu_right: (..., r) kernel second arguments, indexed by column.
        b: (..., r, r) entries to weight.
    """
    mu_left = np.asarray(mu_left, dtype=float)
    mu_right = np.asarray(mu_right, dtype=float)
    b = np.asarray(b, dtype=np.complex128)
    d = mu_right[..., None, :] - mu_left[..., :, None]
    big = d > _LOG_GUARD
    with np.errstate(over="ignore", invalid="ignore"):
        w = psi_bar(np.zeros_like(d), np.where(big, 0.0, d))
        out = np.asarray(w, dtype=np.complex128) * b
    if np.any(big):
        zb = b == 0.0
        mag = np.abs(b)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logw = d - np.log(np.where(big, d, 1.0))
            guarded = np.exp(logw + np.log(np.where(zb, 1.0, mag)))
            phase = np.where(zb, 0.0, b / np.where(zb, 1.0, mag))
            out = np.where(big, np.where(zb, 0.0, guarded * phase), out)
    return out


def psi_bar_apply(s, b, check=True):
    """Apply the divided-difference kernel of a Hermitian fiber to another.

    Diagonalize ``s = u diag(mu) u*``, weight the conjugated entries of ``b``
    by psi_bar(mu_i, mu_j), and rotate back. Reduces to the entrywise rule
    psi_bar(a, b) * B for s = diag(a, b) against an elementary matrix.

    Args:
        s: (..., r, r) Hermitian fiber batch.
        b: (..., r, r) arbitrary fiber batch.
        check: validate Hermitian symmetry of ``s``.

    Returns:
        (..., r, r) complex batch.
    """
    mu, u = herm_eig_desc(s, check=check)
    bp = np.einsum("...ki,...kl,...lj->...ij", np.conj(u), np.asarray(b, dtype=np.complex128), u)
    wp = weighted_hadamard(mu, mu, bp)
    return np.einsum("...ik,...kl,...jl->...ij", u, wp, np.conj(u))


def tau_sort(values):
    """Rearrange spectra into descending order along the last axis."""
    values = np.asarray(values, dtype=float)
    return -np.sort(-values, axis=-1, kind="stable")


def cond_number(a):
    """Condition number (eigenvalue ratio) of Hermitian PD fibers.

    Returns a scalar for a single fiber, an array over the batch otherwise.
    """
    vals, _ = _pd_vals(a, "condition number")
    out = vals[..., 0] / vals[..., -1]
    if out.ndim == 0:
        return float(out)
    return out

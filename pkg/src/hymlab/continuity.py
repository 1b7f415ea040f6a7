"""Spring-regularized constant-curvature solves down a shrinking schedule.

The equation theta(K e^s) - lam Id + eps s = 0 adds a spring term to the
constant-mean-curvature problem. For every eps in (0, 1] the linearization
gains eps on top of the (nonnegative) rough Laplacian, so a damped
quasi-Newton iteration with a compact-stencil elliptic preconditioner
converges, and solutions warm-start one another down a decreasing schedule.
As eps shrinks, the eigenvalue statistics of the solutions approach the
slope vector of the destabilizing filtration; on split backgrounds the
solve reduces blockwise to scalar problems and the divergent part of s is
a per-block constant, which this module keeps in closed form so the path
reaches eps = 1e-3 without leaving double range.

The spring constant lam is closed self-consistently against the discrete
degree of the current iterate. The two readings of lam (from K or from H)
agree in exact arithmetic; on the masked composite grid they differ by the
O(h^2) degree drift, and closing the mean exactly is what keeps the trace
of s from inheriting that drift divided by eps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .bundles import (
    catalog_bundle,
    conformal_scale,
    degree,
    hym_lambda,
    mean_curvature,
    running_spectrum_stats,
    spectrum_stats,
    SpectrumStats,
)
from .errors import (
    EpsilonOutOfRange,
    NoConvergence,
    PresentationMismatch,
    TraceNotNormalized,
)
from .hermitian import herm_eig_desc, herm_part, mat_pow_pd, mat_sqrt_pd, psi_bar

__all__ = [
    "PerturbedSolution",
    "PathResult",
    "DEFAULT_SCHEDULE",
    "normalize_background",
    "solve_perturbed",
    "eps_path",
    "key_identity_residual",
    "slope_targets",
]

logger = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3)

# largest |log-eigenvalue| the dense path tolerates: beyond this the metric
# is no longer reliably invertible in doubles and only block-reduced data
# can continue
_EXP_RANGE = 30.0

# block solutions are materialized as explicit diagonal metrics up to this
# log scale (elementwise exponentials, no inversion involved)
_PACK_RANGE = 120.0

_BACKGROUND_TOL = 1e-8


@dataclass
class PerturbedSolution:
    """One solve of the spring-regularized equation.

    h_eps is None when the solution metric itself leaves double range
    (deep-schedule block solves); s_eps always represents the solution.
    """

    epsilon: float
    h_eps: list | None
    s_eps: list
    residual: float
    lam: float
    iterations: int
    stats: SpectrumStats

    # private warm-start payload for the block-reduced path
    _blocks: tuple | None = None


@dataclass
class PathResult:
    """Warm-started schedule of solves plus the extrapolated limit."""

    eps: np.ndarray
    solutions: list
    lam_mU: np.ndarray
    lam_mL: np.ndarray
    eps_s_l2: np.ndarray
    lam_mU_limit: np.ndarray
    lam_mL_limit: np.ndarray
    target_mU: np.ndarray
    target_mL: np.ndarray
    k_used: list


# ---------------- background normalization ----------------


def normalize_background(pres, k, tol=_BACKGROUND_TOL, max_iter=200, depth=6):
    """Conformal change making tr(theta_K - lam Id) vanish pointwise.

    Fixed-point sweeps of the compact-stencil Poisson correction against
    the composed curvature defect, wrapped in Anderson extrapolation over
    the accumulated potential: the plain sweep contracts slowly on the
    modes where the two stencils disagree, and the least-squares recombination
    removes exactly that tail.
    """
    m = pres.manifold
    r = pres.rank
    k0 = pres.refresh_metric([np.array(c, dtype=complex) for c in k])
    shape = [m.charts[c].coord.shape for c in range(len(m.charts))]

    def unpack(x):
        out, pos = [], 0
        for sh in shape:
            cnt = sh[0] * sh[1]
            out.append(x[pos:pos + cnt].reshape(sh))
            pos += cnt
        return out

    def sweep(x):
        cur = conformal_scale(pres, k0, unpack(x))
        lam = hym_lambda(pres, cur)
        theta = mean_curvature(pres, cur)
        q = [(np.einsum("...ii", t).real - r * lam) / r for t in theta]
        if m.kind == "cp1":
            q = [np.where(c.pde, arr, 0.0) for c, arr in zip(m.charts, q)]
            q = m.refresh(q)
        defect = r * max(float(np.abs(arr[c.owned]).max())
                         for c, arr in zip(m.charts, q))
        shift = m.mean(q)
        f = m.poisson_solve([arr - shift for arr in q])
        return cur, defect, np.concatenate([a.ravel() for a in f])

    x = np.zeros(sum(sh[0] * sh[1] for sh in shape))
    xs, res = [], []
    cur, defect, r_vec = sweep(x)
    for it in range(max_iter):
        if defect <= tol:
            logger.debug("background normalized in %d sweeps, defect %.2e",
                         it, defect)
            return cur
        xs.append(x)
        res.append(r_vec)
        if len(xs) > depth + 1:
            xs.pop(0)
            res.pop(0)
        if len(xs) >= 2:
            dr = np.stack([res[i + 1] - res[i]
                           for i in range(len(res) - 1)], axis=1)
            dx = np.stack([xs[i + 1] - xs[i]
                           for i in range(len(xs) - 1)], axis=1)
            gamma, *_ = np.linalg.lstsq(dr, r_vec, rcond=None)
            x_new = x + r_vec - (dx + dr) @ gamma
        else:
            x_new = x + r_vec
        cur_new, defect_new, r_new = sweep(x_new)
        if defect_new > 2.0 * defect and len(xs) >= 2:
            # extrapolation overshot; restart history from a plain sweep
            x_new = x + r_vec
            cur_new, defect_new, r_new = sweep(x_new)
            xs, res = [x], [r_vec]
        x, cur, defect, r_vec = x_new, cur_new, defect_new, r_new
    raise NoConvergence(
        f"trace normalization stalled at defect {defect:.3e} after "
        f"{max_iter} sweeps")


def _trace_defect(pres, k, lam):
    m = pres.manifold
    r = pres.rank
    theta = mean_curvature(pres, k)
    fields = [np.abs(np.einsum("...ii", t).real - r * lam) for t in theta]
    return max(float(arr[c.owned].max()) for c, arr in zip(m.charts, fields))


# ---------------- elliptic preconditioner ----------------


class _Helmholtz:
    """Componentwise (eps - laplacian)^{-1} with the composed stencil.

    The composed scalar operator (centered d_z then centered d_zbar) is
    what every curvature evaluation in this package differentiates, so
    using it here makes the preconditioner an exact scalar Jacobian: wide
    5-point stencil on the projective line (the mixed terms cancel), exact
    symbol through the FFT on the torus. Sparse factorizations are cached
    per (eps, twist class); the seam rows carry the transition factor of
    the endomorphism component being solved, so twisted off-diagonal
    channels see a consistent gluing.
    """

    def __init__(self, manifold):
        self.m = manifold
        self._lus = {}
        if manifold.kind == "torus":
            n, h, tau = manifold.n, manifold.h, manifold.tau
            kk = np.arange(n)
            s1 = np.sin(2.0 * np.pi * kk / n) / h
            s2 = np.sin(2.0 * np.pi * kk / n) / h
            diff = s2[None, :] - tau * s1[:, None]
            self.kappa = np.abs(diff) ** 2 / (2.0 * tau.imag**2)
            self._base = None
        else:
            self.kappa = None
            self._base = self._assemble_cp1()

    def _assemble_cp1(self):
        m = self.m
        n = m.n
        npts = n * n
        gidx = []
        offset = 0
        for chart in m.charts:
            ids = np.full(npts, -1, dtype=int)
            flat = np.flatnonzero(chart.pde.ravel())
            ids[flat] = offset + np.arange(len(flat))
            gidx.append(ids)
            offset += len(flat)
        nunk = offset
        band_pos = []
        for chart in m.charts:
            pos = np.full(npts, -1, dtype=int)
            pos[chart.band_flat] = np.arange(len(chart.band_flat))
            band_pos.append(pos)
        in_r, in_c, in_d = [], [], []
        sm_r, sm_c, sm_d, sm_chart, sm_bp = [], [], [], [], []
        h2 = m.h * m.h
        for c, chart in enumerate(m.charts):
            dens = chart.density.ravel()
            interp = chart.interp.tocsr()
            for p in np.flatnonzero(chart.pde.ravel()):
                gp = gidx[c][p]
                # centered d_z then centered d_zbar: wide 5-point weights
                inv = 1.0 / (8.0 * dens[p] * h2)
                for q, wq in ((p, -4.0 * inv), (p - 2 * n, inv),
                              (p + 2 * n, inv), (p - 2, inv), (p + 2, inv)):
                    if gidx[c][q] >= 0:
                        in_r.append(gp)
                        in_c.append(gidx[c][q])
                        in_d.append(wq)
                    else:
                        bp = band_pos[c][q]
                        row = interp.getrow(bp)
                        for col_flat, s_w in zip(row.indices, row.data):
                            sm_r.append(gp)
                            sm_c.append(gidx[1 - c][col_flat])
                            sm_d.append(wq * s_w)
                            sm_chart.append(c)
                            sm_bp.append(bp)
        return {
            "gidx": gidx, "nunk": nunk,
            "in": (np.array(in_r), np.array(in_c), np.array(in_d)),
            "seam": (np.array(sm_r), np.array(sm_c),
                     np.array(sm_d, dtype=complex),
                     np.array(sm_chart), np.array(sm_bp)),
        }

    def _lu(self, eps, key, factors):
        lu = self._lus.get((eps, key))
        if lu is None:
            b = self._base
            nunk = b["nunk"]
            in_r, in_c, in_d = b["in"]
            sm_r, sm_c, sm_d, sm_chart, sm_bp = b["seam"]
            if factors is None:
                sd = sm_d
            else:
                scale = np.where(sm_chart == 0,
                                 factors[0][sm_bp], factors[1][sm_bp])
                sd = sm_d * scale
            rows = np.concatenate([in_r, sm_r])
            cols = np.concatenate([in_c, sm_c])
            data = np.concatenate([in_d.astype(complex), sd])
            a = scipy.sparse.coo_matrix((data, (rows, cols)),
                                        shape=(nunk, nunk)).tocsc()
            mat = (eps * scipy.sparse.identity(nunk, format="csc",
                                               dtype=complex) - a).tocsc()
            lu = scipy.sparse.linalg.splu(mat)
            self._lus[(eps, key)] = lu
        return lu

    def _solve_cp1(self, eps, fields, key, factors):
        b = self._base
        gidx, nunk = b["gidx"], b["nunk"]
        lu = self._lu(eps, key, factors)
        rhs = np.zeros(nunk, dtype=complex)
        for c in range(len(self.m.charts)):
            flat = fields[c].ravel()
            sel = gidx[c] >= 0
            rhs[gidx[c][sel]] = flat[sel]
        sol = lu.solve(rhs)
        out = []
        for c in range(len(self.m.charts)):
            arr = np.zeros(self.m.n * self.m.n, dtype=complex)
            sel = gidx[c] >= 0
            arr[sel] = sol[gidx[c][sel]]
            out.append(arr.reshape(self.m.n, self.m.n))
        return out

    def solve_scalar(self, eps, fields):
        """(eps - L)^{-1} applied to a list of per-chart complex scalars."""
        if self.m.kind == "torus":
            hat = np.fft.fft2(fields[0], axes=(0, 1))
            out = np.fft.ifft2(hat / (eps + self.kappa), axes=(0, 1))
            return [out]
        return self._solve_cp1(eps, fields, "scalar", None)

    def solve_endo(self, eps, fields, pres=None, channel_scale=None):
        """Componentwise solve on a list of per-chart (n, n, r, r) fields.

        With a split presentation the seam rows are twisted per component;
        otherwise every component is treated as a global scalar.
        channel_scale holds per-channel diffusivity enhancements w_ij
        (power-of-two quantized by the caller): channel (i, j) is solved as
        (1/w) (eps/w - L)^{-1}, approximating (eps - w L)^{-1} with a
        cache-friendly key.
        """
        r = fields[0].shape[-1]
        out = [np.zeros_like(f) for f in fields]
        twisted = (self.m.kind == "cp1" and pres is not None
                   and pres.kind == "cp1_split")
        for i in range(r):
            for j in range(r):
                comp = [f[..., i, j] for f in fields]
                w = 1.0 if channel_scale is None else float(channel_scale[i, j])
                if w != 1.0:
                    comp = [c / w for c in comp]
                if twisted:
                    factors = [bef[:, i, j] for bef in pres.band_endo_factor]
                    got = self._solve_cp1(eps / w, comp, (pres.tag, i, j),
                                          factors)
                else:
                    got = self.solve_scalar(eps / w, comp)
                for c, arr in enumerate(got):
                    out[c][..., i, j] = arr
        return out


def _helmholtz(manifold):
    cached = getattr(manifold, "_helmholtz_cache", None)
    if cached is None:
        cached = _Helmholtz(manifold)
        manifold._helmholtz_cache = cached
    return cached


# ---------------- spectrum statistics without materializing H ----------------


def _stats_from_eigfields(m, lam_fields):
    return running_spectrum_stats(m, lam_fields)


# ---------------- block-reduced scalar path ----------------


def _line_presentations(pres):
    m = pres.manifold
    if pres.kind == "cp1_split":
        return [catalog_bundle(m, f"O({d})") for d in pres.degrees]
    if pres.kind == "torus_diag":
        return [catalog_bundle(m, "flat(1)") for _ in range(pres.rank)]
    raise PresentationMismatch(
        f"presentation {pres.tag!r} has no split block structure")


def _splits_blockwise(pres):
    if pres.kind == "cp1_split":
        return True
    if pres.kind == "torus_diag":
        eye = np.eye(pres.rank)
        return all(np.allclose(a, eye) for a in pres.automorphy)
    return False


def _is_block_diagonal(k, tol=1e-13):
    for arr in k:
        r = arr.shape[-1]
        if r == 1:
            continue
        off = arr.copy()
        idx = np.arange(r)
        off[..., idx, idx] = 0.0
        scale = float(np.abs(arr).max())
        if float(np.abs(off).max()) > tol * max(scale, 1.0):
            return False
    return True


class _Stall(Exception):
    """Internal: Anderson driver exhausted its budget."""

    def __init__(self, defect, x, payload, iterations):
        super().__init__(f"stalled at defect {defect:.3e}")
        self.defect = defect
        self.x = x
        self.payload = payload
        self.iterations = iterations


def _anderson_drive(x, sweep, tol, max_iter, depth=6):
    """Accelerated fixed-point driver shared by the solve routes.

    sweep(x) returns (payload, defect, increment); the plain iteration is
    x + beta * increment with beta backtracked on growth or overflow, and
    the extrapolation recombines the recent history of full increments.
    max_iter bounds the number of sweep evaluations. EpsilonOutOfRange
    from a candidate shrinks the step; it propagates only once beta is
    exhausted.
    """
    xs, incs = [], []
    payload, defect, inc = sweep(x)
    best = (defect, x, payload, 0)
    beta = 1.0
    work = 0
    while work < max_iter:
        if defect <= tol:
            return x, payload, defect, work
        xs.append(x)
        incs.append(inc)
        if len(xs) > depth + 1:
            xs.pop(0)
            incs.pop(0)
        accepted = None
        if len(xs) >= 2:
            dr = np.stack([incs[i + 1] - incs[i]
                           for i in range(len(incs) - 1)], axis=1)
            dx = np.stack([xs[i + 1] - xs[i]
                           for i in range(len(xs) - 1)], axis=1)
            gamma, *_ = np.linalg.lstsq(dr, inc, rcond=None)
            cand = x + inc - (dx + dr) @ gamma
            try:
                work += 1
                trial = sweep(cand)
                if trial[1] <= 2.0 * defect:
                    accepted = (cand, trial)
            except EpsilonOutOfRange:
                pass
            if accepted is None:
                # extrapolation rejected; restart history from a plain step
                logger.debug("anderson reject at defect %.3e", defect)
                xs, incs = [x], [inc]
        while accepted is None:
            cand = x + beta * inc
            try:
                work += 1
                trial = sweep(cand)
            except EpsilonOutOfRange:
                if beta <= 1 / 64 or work >= max_iter:
                    raise _Stall(*best) from None
                beta *= 0.5
                continue
            if trial[1] <= max(1.5 * defect, tol):
                accepted = (cand, trial)
            elif beta <= 1 / 64 or work >= max_iter:
                # no safe step exists at the smallest damping: give up
                raise _Stall(*best)
            else:
                beta *= 0.5
        beta = min(1.0, 1.5 * beta)
        x, (payload, defect, inc) = accepted
        if defect < best[0]:
            best = (defect, x, payload, work)
        if work % 25 < 1:
            logger.debug("anderson sweep %d defect %.3e", work, defect)
    if defect <= tol:
        return x, payload, defect, work
    raise _Stall(*best)


def _solve_blocks(pres, k, eps, start, tol, max_iter, precond):
    """Decoupled scalar solves, one per line summand, with shared lam.

    State per line: a constant c (the possibly huge log scale, never
    exponentiated) and a mean-free field v. theta(e^(c+v) k_i) equals
    theta(e^v k_i) exactly, so the whole path stays in double range.
    """
    m = pres.manifold
    lines = _line_presentations(pres)
    r = pres.rank
    nch = len(m.charts)
    npts = m.n * m.n
    kdiag = [[arr[..., i, i].real.astype(complex)[..., None, None]
              for arr in k] for i in range(r)]

    def unpack(x):
        fields = x.reshape(r, nch, m.n, m.n)
        return [[fields[i, c] for c in range(nch)] for i in range(r)]

    def sweep(x):
        us = unpack(x)
        cs, vs = [], []
        for i in range(r):
            u = m.refresh(us[i]) if m.kind == "cp1" else us[i]
            cmean = float(np.real(m.mean(u)))
            cs.append(cmean)
            vs.append([arr - cmean for arr in u])
        thetas = []
        for i in range(r):
            hv = [kc * np.exp(vc)[..., None, None]
                  for kc, vc in zip(kdiag[i], vs[i])]
            th = mean_curvature(lines[i], hv)
            thetas.append([t[..., 0, 0].real for t in th])
        deg = sum(float(np.real(m.integrate(thetas[i]))) for i in range(r))
        lam = deg / (r * m.volume)
        resf = [[t - lam + eps * (cs[i] + v)
                 for t, v in zip(thetas[i], vs[i])]
                for i in range(r)]
        defect = max(
            max(float(np.abs(f[c.owned]).max())
                for c, f in zip(m.charts, fields))
            for fields in resf)
        inc = np.zeros_like(x).reshape(r, nch, m.n, m.n)
        for i in range(r):
            sol = precond.solve_scalar(
                eps, [f.astype(complex) for f in resf[i]])
            for c in range(nch):
                inc[i, c] = -np.real(sol[c])
        return (cs, vs, thetas, lam), defect, inc.reshape(-1)

    x0 = np.zeros(r * nch * npts)
    if start is not None:
        cs0, vs0 = start
        arr = x0.reshape(r, nch, m.n, m.n)
        for i in range(r):
            for c in range(nch):
                arr[i, c] = cs0[i] + vs0[i][c]
    try:
        _, payload, defect, iters = _anderson_drive(
            x0, sweep, tol, max_iter)
    except _Stall as stall:
        cs, vs, thetas, lam = stall.payload
        err = NoConvergence(
            f"block solve at eps {eps:.3e} stalled at residual "
            f"{stall.defect:.3e}")
        err.best = _package_blocks(pres, k, eps, (cs, vs), thetas, lam,
                                   stall.defect, max_iter)
        raise err from None
    cs, vs, thetas, lam = payload
    return (cs, vs), thetas, lam, defect, iters


def _package_blocks(pres, k, eps, blocks, thetas, lam, residual, iterations):
    m = pres.manifold
    r = pres.rank
    cs, vs = blocks
    s_eps = []
    for c in range(len(m.charts)):
        arr = np.zeros(m.charts[c].coord.shape + (r, r), dtype=complex)
        for i in range(r):
            arr[..., i, i] = cs[i] + vs[i][c]
        s_eps.append(arr)
    lam_fields = []
    for c in range(len(m.charts)):
        stack = np.stack([thetas[i][c] for i in range(r)], axis=-1)
        lam_fields.append(np.sort(stack, axis=-1)[..., ::-1])
    stats = _stats_from_eigfields(m, lam_fields)
    h_eps = None
    if max(abs(c) + max(float(np.abs(a).max()) for a in v)
           for c, v in zip(cs, vs)) < _PACK_RANGE:
        h_eps = []
        for c in range(len(m.charts)):
            arr = np.array(k[c], dtype=complex)
            out = np.zeros_like(arr)
            for i in range(r):
                out[..., i, i] = arr[..., i, i] * np.exp(cs[i] + vs[i][c])
            h_eps.append(out)
    return PerturbedSolution(
        epsilon=eps, h_eps=h_eps, s_eps=s_eps, residual=residual, lam=lam,
        iterations=iterations, stats=stats, _blocks=(cs, vs))


# ---------------- dense path ----------------


def _sqrt_pair(k):
    khalf = [mat_sqrt_pd(np.array(c, dtype=complex)) for c in k]
    kinvhalf = [mat_pow_pd(np.array(c, dtype=complex), -0.5) for c in k]
    return khalf, kinvhalf


def _solve_dense(pres, k, eps, s0, tol, max_iter, precond):
    m = pres.manifold
    r = pres.rank
    nch = len(m.charts)
    khalf, kinvhalf = _sqrt_pair(k)
    ident = np.eye(r)

    def unpack(xr):
        x = np.ascontiguousarray(xr).view(np.complex128)
        return [arr for arr in x.reshape(nch, m.n, m.n, r, r)]

    def sweep(xr):
        # project to the Hermitian slice in the K inner product, then glue
        s = [kih @ herm_part(kh @ sc @ kih) @ kh
             for kh, kih, sc in zip(khalf, kinvhalf, unpack(xr))]
        if m.kind == "cp1":
            s = pres.refresh_endo(s)
        h = []
        wsum = np.zeros((r, r))
        for ci, chart in enumerate(m.charts):
            mu, u = herm_eig_desc(
                herm_part(khalf[ci] @ s[ci] @ kinvhalf[ci]), check=False)
            mu_max = float(np.abs(mu).max())
            if mu_max > _EXP_RANGE:
                raise EpsilonOutOfRange(
                    f"log-metric range {mu_max:.1f} exceeds the dense-path "
                    f"budget at eps {eps:.3e}; only block-diagonal data can "
                    "continue deeper")
            wsum += psi_bar(mu[..., None, :],
                            mu[..., :, None])[chart.owned].mean(axis=0)
            exps = np.einsum("...ik,...k,...jk->...ij", u, np.exp(mu),
                             np.conj(u))
            h.append(khalf[ci] @ exps @ khalf[ci])
        wmean = wsum / nch
        # channel diffusivity from the pair-symmetric kernel average,
        # quantized so the factor cache stays small
        scale = 2.0 ** np.round(np.log2(
            np.maximum(0.5 * (wmean + wmean.T), 1e-12)))
        try:
            theta = mean_curvature(pres, h)
        except np.linalg.LinAlgError:
            raise EpsilonOutOfRange(
                f"metric left invertible range at eps {eps:.3e}; only "
                "block-diagonal data can continue deeper") from None
        lam = 2.0 * np.pi * degree(pres, theta=theta) / (r * m.volume)
        f = [t - lam * ident + eps * sc for t, sc in zip(theta, s)]
        ft = [kh @ fc @ kih for kh, fc, kih in zip(khalf, f, kinvhalf)]
        defect = max(
            float(np.linalg.svd(fc[c.owned], compute_uv=False)[..., 0].max())
            for c, fc in zip(m.charts, ft))
        delta = precond.solve_endo(eps, f, pres, channel_scale=scale)
        inc = -np.stack([d for d in delta], axis=0).reshape(-1)
        return (s, h, theta, lam), defect, inc.view(np.float64)

    if s0 is None:
        x0 = np.zeros(nch * m.n * m.n * r * r, dtype=complex).view(np.float64)
    else:
        x0 = np.stack([np.array(c, dtype=complex) for c in s0],
                      axis=0).reshape(-1).view(np.float64)
    try:
        _, payload, defect, iters = _anderson_drive(
            x0, sweep, tol, max_iter, depth=16)
    except _Stall as stall:
        s_b, h_b, theta_b, lam_b = stall.payload
        err = NoConvergence(
            f"dense solve at eps {eps:.3e} stalled at residual "
            f"{stall.defect:.3e}")
        err.best = PerturbedSolution(
            epsilon=eps, h_eps=h_b, s_eps=s_b, residual=stall.defect,
            lam=lam_b, iterations=max_iter,
            stats=spectrum_stats(pres, h_b, theta=theta_b))
        raise err from None
    s, h, theta, lam = payload
    return s, h, theta, lam, defect, iters


# ---------------- public entry points ----------------


def solve_perturbed(pres, k, eps, warm_start=None, tol=1e-8, max_iter=120):
    """Solve theta(K e^s) - lam Id + eps s = 0 at one spring constant.

    The background must be trace-normalized (see normalize_background);
    lam is closed against the discrete degree of the iterate. Block-diagonal
    data on split presentations takes the scalar route, which keeps the
    divergent log scale in closed form; anything else runs the dense
    iteration and refuses once the metric would leave double range.

    Raises:
        EpsilonOutOfRange: eps outside (0, 1], or dense-path range hit.
        TraceNotNormalized: background trace defect above 1e-6.
        NoConvergence: iteration stalled; the error carries the best
            iterate in its ``best`` attribute.
    """
    if not 0.0 < eps <= 1.0:
        raise EpsilonOutOfRange(f"eps must lie in (0, 1], got {eps:.3e}")
    m = pres.manifold
    k = pres.refresh_metric([np.array(c, dtype=complex) for c in k])
    if _trace_defect(pres, k, hym_lambda(pres, k)) > 1e-6:
        raise TraceNotNormalized(
            "background trace defect above 1e-6; run normalize_background")
    precond = _helmholtz(m)
    blockable = _splits_blockwise(pres) and _is_block_diagonal(k)
    start = None
    if isinstance(warm_start, PerturbedSolution):
        if warm_start._blocks is not None and blockable:
            start = warm_start._blocks
        else:
            blockable = False
            start = warm_start.s_eps
    elif warm_start is not None:
        blockable = False
        start = warm_start
    if blockable:
        blocks, thetas, lam, res, iters = _solve_blocks(
            pres, k, eps, start, tol, max_iter, precond)
        sol = _package_blocks(pres, k, eps, blocks, thetas, lam, res, iters)
    else:
        s, h, theta, lam, res, iters = _solve_dense(
            pres, k, eps, start, tol, max_iter, precond)
        sol = PerturbedSolution(
            epsilon=eps, h_eps=h, s_eps=s, residual=res, lam=lam,
            iterations=iters, stats=spectrum_stats(pres, h, theta=theta))
    logger.info("perturbed solve %s eps %.3e: residual %.2e in %d iterations",
                pres.tag, eps, sol.residual, sol.iterations)
    return sol


def slope_targets(pres):
    """(descending, ascending) limits of the running eigenvalue means.

    Entry k of the first array is (2 pi / Vol) times the sum of the k+1
    largest slopes, entry k of the second the sum of the k+1 smallest,
    matching the mean_desc / mean_asc convention of the statistics.
    """
    if pres.kind == "cp1_split":
        mu = np.sort(np.array(pres.degrees, dtype=float))[::-1]
    else:
        mu = np.zeros(pres.rank)
    scale = 2.0 * np.pi / pres.manifold.volume
    return scale * np.cumsum(mu), scale * np.cumsum(mu[::-1])


def _eps_s_l2(pres, sol):
    m = pres.manifold
    fields = []
    for c, sc in zip(m.charts, sol.s_eps):
        val = np.einsum("...ij,...ji->...", sc, sc).real
        if m.kind == "cp1":
            val = np.where(c.pde, val, 0.0)
        fields.append(val)
    if m.kind == "cp1":
        fields = m.refresh(fields)
    return sol.epsilon * float(np.sqrt(max(m.integrate(fields), 0.0)))


def _extrapolate(eps, values):
    # first-order fit a + b eps on the last three schedule points
    e = np.asarray(eps[-3:], dtype=float)
    v = np.asarray(values[-3:], dtype=float)
    a = np.column_stack([np.ones_like(e), e])
    coef, *_ = np.linalg.lstsq(a, v, rcond=None)
    return coef[0]


def eps_path(pres, k, schedule=None, tol=1e-8, max_iter=120):
    """Warm-started solves down a decreasing schedule plus the limit report.

    The background is trace-normalized before the first solve. Aborts at
    the first failed solve by raising NoConvergence with the partial path
    attached as ``partial``.
    """
    if schedule is None:
        schedule = DEFAULT_SCHEDULE
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise EpsilonOutOfRange("schedule must be strictly decreasing")
    k = normalize_background(pres, k)
    solutions = []
    warm = None
    for eps in schedule:
        try:
            sol = solve_perturbed(pres, k, eps, warm_start=warm, tol=tol,
                                  max_iter=max_iter)
        except NoConvergence as err:
            err.partial = _path_report(pres, k, solutions)
            raise
        solutions.append(sol)
        warm = sol
    return _path_report(pres, k, solutions)


def _path_report(pres, k, solutions):
    r = pres.rank
    eps = np.array([s.epsilon for s in solutions])
    m_u = np.array([s.stats.mean_desc for s in solutions]).reshape(-1, r)
    m_l = np.array([s.stats.mean_asc for s in solutions]).reshape(-1, r)
    l2 = np.array([_eps_s_l2(pres, s) for s in solutions])
    if len(solutions) >= 3:
        lim_u = np.array([_extrapolate(eps, m_u[:, i]) for i in range(r)])
        lim_l = np.array([_extrapolate(eps, m_l[:, i]) for i in range(r)])
    elif solutions:
        lim_u, lim_l = m_u[-1].copy(), m_l[-1].copy()
    else:
        lim_u = np.full(r, np.nan)
        lim_l = np.full(r, np.nan)
    tgt_u, tgt_l = slope_targets(pres)
    return PathResult(eps=eps, solutions=solutions, lam_mU=m_u, lam_mL=m_l,
                      eps_s_l2=l2, lam_mU_limit=lim_u, lam_mL_limit=lim_l,
                      target_mU=tgt_u, target_mL=tgt_l, k_used=k)


# ---------------- key identity ----------------


def key_identity_residual(pres, solution, k):
    """Defect of the pairing identity behind the spring-term estimates.

    Pairs the solved equation with s and integrates by parts: the
    curvature-difference term becomes a positive divided-difference form in
    the (0,1)-derivative of s, weighted entrywise by the kernel value at
    the transposed eigenvalue pair. Returns |T1 + T2 + T3| where

        T1 = integral tr((theta_K - lam Id) s),
        T2 = integral (2/g) sum_ij psibar(mu_j, mu_i) |(dbar s)~_ij|^2,
        T3 = eps * integral tr(s^2),

    all against the area form; the continuum value is zero and the discrete
    defect shrinks at second order.
    """
    m = pres.manifold
    eps = solution.epsilon
    lam = solution.lam
    s = solution.s_eps
    khalf, kinvhalf = _sqrt_pair(k)
    theta_k = mean_curvature(pres, k)
    t1_fields, t2_fields, t3_fields = [], [], []
    for ci, chart in enumerate(m.charts):
        sc = s[ci]
        t1 = np.einsum("...ij,...ji->...", theta_k[ci]
                       - lam * np.eye(pres.rank), sc).real
        t3 = eps * np.einsum("...ij,...ji->...", sc, sc).real
        if m.kind == "torus":
            b = m.d_zbar(sc, shift=pres.shift_endo)
        else:
            b = m.d_zbar(sc)
        st = herm_part(khalf[ci] @ sc @ kinvhalf[ci])
        bt = khalf[ci] @ b @ kinvhalf[ci]
        mu, u = herm_eig_desc(st, check=False)
        bp = np.einsum("...ki,...kl,...lj->...ij", np.conj(u), bt, u)
        w = psi_bar(mu[..., None, :], mu[..., :, None])
        # the kernel overflows on wide eigenvalue spreads exactly where the
        # conjugated derivative vanishes identically; drop those inf*0 pairs
        ab2 = np.abs(bp) ** 2
        w = np.where(ab2 == 0.0, 0.0, w)
        t2 = (2.0 / chart.density) * (w * ab2).sum(axis=(-2, -1)).real
        if m.kind == "cp1":
            t1 = np.where(chart.pde, t1, 0.0)
            t2 = np.where(chart.pde, t2, 0.0)
            t3 = np.where(chart.pde, t3, 0.0)
        t1_fields.append(t1)
        t2_fields.append(t2)
        t3_fields.append(t3)
    if m.kind == "cp1":
        t1_fields = m.refresh(t1_fields)
        t2_fields = m.refresh(t2_fields)
        t3_fields = m.refresh(t3_fields)
    total = (float(m.integrate(t1_fields)) + float(m.integrate(t2_fields))
             + float(m.integrate(t3_fields)))
    return abs(total)

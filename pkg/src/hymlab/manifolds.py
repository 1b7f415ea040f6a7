"""Discretized model base curves.

Two models are provided. The projective line carries the Fubini-Study metric
and is covered by two coordinate squares glued along w = 1/z; each chart is a
uniform midpoint grid, points near the seam are refreshed by interpolation
from the partner chart, and a smooth partition of unity is folded into the
quadrature weights so integrals of smooth functions converge far faster than
the O(h) a sharp seam mask would give. The torus C/(Z + tau Z) is a single
periodic grid in the lattice coordinates with constant metric density.

Conventions. The metric density g is the coefficient in the area form
g dx dy, so the projective line integrates to pi and the torus to Im(tau).
The scalar operator ``laplacian`` is 2 f_{z zbar} / g: negative spectrum,
equal to the Laplace-Beltrami operator divided by two. On the projective line
the raw stencil picks up an O(h^2) compatibility defect against the discrete
weights, so laplacian subtracts the weighted mean of its output; with that
correction integrals of laplacian output vanish to rounding and the Poisson
solver below is an exact inverse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    DimensionMismatch,
    GridTooCoarse,
    InvalidModulus,
    NonZeroMean,
    UnstableTimestep,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Chart",
    "BaseManifold",
    "build_cp1",
    "build_torus",
    "scalar_heat_run",
    "HeatRun",
]

MIN_RESOLUTION = 8
PARTITION_RADIUS = 1.2
_CHART_EXTENTS = (1.4, 1.6, 2.0, 2.5, 3.0, 4.0)


def _bump(x):
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smoothstep(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, with s(x) + s(1-x) = 1."""
    x = np.asarray(x, dtype=float)
    a = _bump(x)
    b = _bump(1.0 - x)
    return a / (a + b)


def _lagrange_cubic(xi):
    # weights on nodes {-1, 0, 1, 2} for evaluation at xi in [0, 1)
    return (
        -xi * (xi - 1.0) * (xi - 2.0) / 6.0,
        (xi + 1.0) * (xi - 1.0) * (xi - 2.0) / 2.0,
        -(xi + 1.0) * xi * (xi - 2.0) / 2.0,
        (xi + 1.0) * xi * (xi - 1.0) / 6.0,
    )


def _lagrange_linear(xi):
    return (1.0 - xi, xi)


@dataclass
class Chart:
    """One coordinate square of the cover."""

    index: int
    coord: np.ndarray
    density: np.ndarray
    weight: np.ndarray
    owned: np.ndarray
    pde: np.ndarray
    band_flat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    interp: scipy.sparse.csr_matrix | None = None


class BaseManifold:
    """A discretized model curve; build with build_cp1 or build_torus."""

    def __init__(self, kind, n, h, charts, tau=None, extent=None, evolve_radius=None,
                 interp_order=None):
        self.kind = kind
        self.n = n
        self.h = h
        self.charts = charts
        self.tau = tau
        self.extent = extent
        self.evolve_radius = evolve_radius
        self.interp_order = interp_order
        self.volume = float(sum(c.weight.sum() for c in charts))
        self._poisson_cache = None
        self._shifted_cache = {}

    # ---------------- fields ----------------

    def zero_field(self, trailing=(), dtype=float):
        return [np.zeros((self.n, self.n) + tuple(trailing), dtype=dtype)
                for _ in self.charts]

    def constant_field(self, value):
        return [np.full((self.n, self.n), float(value)) for _ in self.charts]

    def check_field(self, f):
        if len(f) != len(self.charts):
            raise DimensionMismatch(
                f"field has {len(f)} chart arrays, manifold has {len(self.charts)}")
        for arr in f:
            if arr.shape[:2] != (self.n, self.n):
                raise DimensionMismatch(
                    f"chart array leading shape {arr.shape[:2]} != {(self.n, self.n)}")
        return f

    # ---------------- seam refresh ----------------

    def refresh(self, f, transform=None):
        """Replace seam-band values by interpolation from the partner chart.

        Args:
            f: list of chart arrays, leading dims (n, n).
            transform: optional callable (chart_index, band_values) -> values
                applied to the interpolated partner data before writing, used
                by bundle code to change frames. Identity for scalars.

        Returns:
            New list of arrays (input is not modified). On the torus this is
            a plain copy: the single chart is already global.
        """
        self.check_field(f)
        out = [arr.copy() for arr in f]
        if self.kind != "cp1":
            return out
        npts = self.n * self.n
        for c, chart in enumerate(self.charts):
            src = f[1 - c]
            flat = src.reshape(npts, -1)
            vals = chart.interp @ flat
            vals = vals.reshape((len(chart.band_flat),) + src.shape[2:])
            if transform is not None:
                vals = transform(c, vals)
            dst = out[c].reshape(npts, -1)
            dst[chart.band_flat] = vals.reshape(len(chart.band_flat), -1)
        return out

    # ---------------- integration and statistics ----------------

    def integrate(self, f):
        """Weighted sum over all charts; trailing dims survive."""
        self.check_field(f)
        total = None
        for chart, arr in zip(self.charts, f):
            w = chart.weight.reshape(chart.weight.shape + (1,) * (arr.ndim - 2))
            part = (arr * w).sum(axis=(0, 1))
            total = part if total is None else total + part
        if np.ndim(total) == 0:
            return complex(total) if np.iscomplexobj(total) else float(total)
        return total

    def mean(self, f):
        return self.integrate(f) / self.volume

    def owned_values(self, f):
        self.check_field(f)
        return np.concatenate([arr[chart.owned].ravel()
                               for chart, arr in zip(self.charts, f)])

    def owned_max(self, f):
        return float(self.owned_values(f).real.max())

    def owned_min(self, f):
        return float(self.owned_values(f).real.min())

    # ---------------- derivatives ----------------

    def shift(self, arr, axis, step):
        """Grid translation by one cell; periodic wrap on the torus.

        On the projective line the wrapped values are junk, which is fine
        for consumers that only read stencil output on pde points and
        refresh the seam band afterwards.
        """
        return np.roll(arr, -step, axis=axis)

    def d_z(self, arr, shift=None):
        sh = shift or self.shift
        h = self.h
        d0 = (sh(arr, 0, 1) - sh(arr, 0, -1)) / (2.0 * h)
        d1 = (sh(arr, 1, 1) - sh(arr, 1, -1)) / (2.0 * h)
        if self.kind == "cp1":
            return 0.5 * (d0 - 1j * d1)
        tau = self.tau
        return (np.conj(tau) * d0 - d1) / (np.conj(tau) - tau)

    def d_zbar(self, arr, shift=None):
        sh = shift or self.shift
        h = self.h
        d0 = (sh(arr, 0, 1) - sh(arr, 0, -1)) / (2.0 * h)
        d1 = (sh(arr, 1, 1) - sh(arr, 1, -1)) / (2.0 * h)
        if self.kind == "cp1":
            return 0.5 * (d0 + 1j * d1)
        tau = self.tau
        return (d1 - self.tau * d0) / (np.conj(tau) - tau)

    def _second_sym(self, arr):
        # compact plain second differences plus centered mixed term
        h2 = self.h * self.h
        f_00 = (np.roll(arr, -1, 0) - 2.0 * arr + np.roll(arr, 1, 0)) / h2
        f_11 = (np.roll(arr, -1, 1) - 2.0 * arr + np.roll(arr, 1, 1)) / h2
        return f_00, f_11

    def laplacian(self, f):
        """Scalar operator 2 f_{z zbar} / g, discretized compactly.

        Projective line: 5-point stencil per chart, seam band refreshed on
        input and output, weighted mean of the output subtracted so the
        discrete integral of the result is exactly zero. Torus: exact
        divergence-form stencil, no correction needed.
        """
        self.check_field(f)
        if self.kind == "cp1":
            f = self.refresh(f)
            out = []
            for chart, arr in zip(self.charts, f):
                f_00, f_11 = self._second_sym(arr)
                lap = (f_00 + f_11) / (2.0 * chart.density)
                lap = np.where(chart.pde, lap, 0.0)
                out.append(lap)
            out = self.refresh(out)
            shift = self.mean(out)
            return [arr - shift for arr in out]
        arr = f[0]
        tau = self.tau
        f_ss, f_tt = self._second_sym(arr)
        ds = (np.roll(arr, -1, 0) - np.roll(arr, 1, 0)) / (2.0 * self.h)
        f_st = (np.roll(ds, -1, 1) - np.roll(ds, 1, 1)) / (2.0 * self.h)
        im2 = tau.imag * tau.imag
        fzzb = (abs(tau) ** 2 * f_ss + f_tt - 2.0 * tau.real * f_st) / (4.0 * im2)
        return [2.0 * fzzb.real if not np.iscomplexobj(arr) else 2.0 * fzzb]

    # ---------------- Poisson ----------------

    def _torus_symbol(self):
        n, h, tau = self.n, self.h, self.tau
        k = np.arange(n)
        s2 = np.sin(np.pi * k / n) ** 2
        sd = np.sin(2.0 * np.pi * k / n)
        im2 = tau.imag * tau.imag
        sym = (-4.0 * abs(tau) ** 2 * s2[:, None] - 4.0 * s2[None, :]
               + 2.0 * tau.real * sd[:, None] * sd[None, :])
        # the 2 in 2 f_zzb cancels half of the 4 Im(tau)^2 in f_zzb itself
        return sym / (2.0 * im2 * h * h)

    def _build_poisson_cp1(self):
        n = self.n
        npts = n * n
        nch = len(self.charts)
        gidx = []
        offset = 0
        for chart in self.charts:
            ids = np.full(npts, -1, dtype=int)
            flat = np.flatnonzero(chart.pde.ravel())
            ids[flat] = offset + np.arange(len(flat))
            gidx.append(ids)
            offset += len(flat)
        nunk = offset
        band_pos = []
        for chart in self.charts:
            pos = np.full(npts, -1, dtype=int)
            pos[chart.band_flat] = np.arange(len(chart.band_flat))
            band_pos.append(pos)
        rows, cols, data = [], [], []
        h2 = self.h * self.h
        for c, chart in enumerate(self.charts):
            dens = chart.density.ravel()
            interp = chart.interp.tocsr()
            for p in np.flatnonzero(chart.pde.ravel()):
                gp = gidx[c][p]
                inv = 1.0 / (2.0 * dens[p] * h2)
                for q, wq in ((p, -4.0 * inv), (p - n, inv), (p + n, inv),
                              (p - 1, inv), (p + 1, inv)):
                    if gidx[c][q] >= 0:
                        rows.append(gp)
                        cols.append(gidx[c][q])
                        data.append(wq)
                    else:
                        bp = band_pos[c][q]
                        row = interp.getrow(bp)
                        for col_flat, s_w in zip(row.indices, row.data):
                            rows.append(gp)
                            cols.append(gidx[1 - c][col_flat])
                            data.append(wq * s_w)
        wvec = np.concatenate([chart.weight.ravel()[chart.pde.ravel()]
                               for chart in self.charts])
        rows = np.array(rows)
        cols = np.array(cols)
        data = np.array(data)
        ones_col = np.ones(nunk)
        a = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(nunk, nunk))
        top = scipy.sparse.hstack([a, ones_col[:, None]])
        bottom = scipy.sparse.hstack(
            [scipy.sparse.coo_matrix(wvec[None, :]),
             scipy.sparse.coo_matrix((1, 1))])
        full = scipy.sparse.vstack([top, bottom]).tocsc()
        lu = scipy.sparse.linalg.splu(full)
        logger.debug("poisson factorization: %d unknowns, nnz %d", nunk, full.nnz)
        return lu, gidx, nunk

    def poisson_solve(self, rho):
        """Solve laplacian(f) = rho with weighted mean zero.

        Raises:
            NonZeroMean: if the weighted mean of rho is not numerically zero.
        """
        self.check_field(rho)
        scale = max(float(max(np.abs(r).max() for r in rho)), 1.0)
        m = self.mean(rho)
        if abs(m) > 1e-8 * scale:
            raise NonZeroMean(f"source has weighted mean {m:.3e} (scale {scale:.3e})")
        if self.kind == "torus":
            sym = self._torus_symbol()
            hat = np.fft.fft2(rho[0])
            hat[0, 0] = 0.0
            sym_safe = sym.copy()
            sym_safe[0, 0] = 1.0
            f = np.fft.ifft2(hat / sym_safe)
            f = f.real if not np.iscomplexobj(rho[0]) else f
            return [f - (f * self.charts[0].weight).sum() / self.volume]
        if self._poisson_cache is None:
            self._poisson_cache = self._build_poisson_cp1()
        lu, gidx, nunk = self._poisson_cache
        rhs = np.zeros(nunk + 1)
        for c, chart in enumerate(self.charts):
            flat = rho[c].ravel()
            mask = chart.pde.ravel()
            rhs[gidx[c][np.flatnonzero(mask)]] = flat[mask].real
        sol = lu.solve(rhs)
        out = []
        for c, chart in enumerate(self.charts):
            arr = np.zeros(self.n * self.n)
            mask = np.flatnonzero(chart.pde.ravel())
            arr[mask] = sol[gidx[c][mask]]
            out.append(arr.reshape(self.n, self.n))
        out = self.refresh(out)
        shift = self.mean(out)
        return [arr - shift for arr in out]

    # ---------------- stability ----------------

    def heat_stability_dt(self):
        """Largest stable explicit step for du/dt = 2 laplacian(u)."""
        if self.kind == "cp1":
            gmin = min(float(chart.density[chart.pde].min()) for chart in self.charts)
            return gmin * self.h * self.h / 4.0
        tau = self.tau
        bound = 4.0 * abs(tau) ** 2 + 4.0 + 2.0 * abs(tau.real)
        return (2.0 * tau.imag**2 * self.h * self.h) / bound

    def default_heat_dt(self):
        """Step from the conservative density-ratio rule, capped by stability."""
        if self.kind == "cp1":
            gmin = min(float(chart.density[chart.pde].min()) for chart in self.charts)
            ginv_max = 1.0 / gmin
            dt = 0.2 * self.h * self.h * gmin / ginv_max
        else:
            dt = 0.8 * self.heat_stability_dt()
        return min(dt, 0.999 * self.heat_stability_dt())


def build_cp1(n, interp_order=None):
    """Two-chart midpoint discretization of the projective line.

    Args:
        n: grid points per chart axis, at least 8.
        interp_order: 3 (cubic seam refresh, default when the geometry
            allows) or 1 (bilinear, automatic at very coarse n).

    Returns:
        BaseManifold with Fubini-Study density; volume close to pi.
    """
    if n < MIN_RESOLUTION:
        raise GridTooCoarse(f"n = {n} below minimum {MIN_RESOLUTION}")
    chosen = None
    for order in ([interp_order] if interp_order else [3, 1]):
        reach = 3.0 if order == 3 else 1.5
        for extent in _CHART_EXTENTS:
            h = 2.0 * extent / n
            r_e = extent - 2.0 * h
            if r_e < 1.21:
                continue
            if 1.0 / r_e + reach * h <= r_e:
                chosen = (order, extent, h, r_e)
                break
        if chosen:
            break
    if chosen is None:
        raise GridTooCoarse(f"n = {n}: no chart extent satisfies the seam geometry")
    order, extent, h, r_e = chosen
    axis = -extent + (np.arange(n) + 0.5) * h
    x, y = np.meshgrid(axis, axis, indexing="ij")
    z = x + 1j * y
    rad = np.abs(z)
    density = 1.0 / (1.0 + rad**2) ** 2
    log_ratio = np.where(rad > 1e-300, np.log(np.maximum(rad, 1e-300)), -700.0)
    t = np.clip(log_ratio / np.log(PARTITION_RADIUS), -1.0, 1.0)
    chi = smoothstep((1.0 - t) / 2.0)
    weight = chi * density * h * h
    pde = rad <= r_e
    charts = []
    for c in range(2):
        owned = rad <= 1.0 if c == 0 else rad < 1.0
        charts.append(Chart(index=c, coord=z, density=density, weight=weight,
                            owned=owned, pde=pde))
    band_flat = np.flatnonzero(~pde.ravel())
    w_src = (1.0 / z.ravel()[band_flat])
    gx = (w_src.real + extent) / h - 0.5
    gy = (w_src.imag + extent) / h - 0.5
    rows, cols, data = [], [], []
    if order == 3:
        nodes = (-1, 0, 1, 2)
        wfun = _lagrange_cubic
    else:
        nodes = (0, 1)
        wfun = _lagrange_linear
    i0 = np.floor(gx).astype(int)
    j0 = np.floor(gy).astype(int)
    wx = wfun(gx - i0)
    wy = wfun(gy - j0)
    for a, na in enumerate(nodes):
        for b, nb in enumerate(nodes):
            ii = i0 + na
            jj = j0 + nb
            if np.any((ii < 0) | (ii >= n) | (jj < 0) | (jj >= n)):
                raise GridTooCoarse("seam interpolation stencil leaves the grid")
            rows.extend(range(len(band_flat)))
            cols.extend((ii * n + jj).tolist())
            data.extend((wx[a] * wy[b]).tolist())
    interp = scipy.sparse.csr_matrix(
        (data, (rows, cols)), shape=(len(band_flat), n * n))
    src_flat = np.unique(interp.indices)
    if not np.all(pde.ravel()[src_flat]):
        raise GridTooCoarse("seam interpolation sources leave the solved region")
    for chart in charts:
        chart.band_flat = band_flat
        chart.interp = interp
    m = BaseManifold("cp1", n, h, charts, extent=extent, evolve_radius=r_e,
                     interp_order=order)
    logger.info("cp1 grid: n=%d extent=%.2f h=%.4f evolve_radius=%.4f order=%d "
                "volume=%.12f", n, extent, h, r_e, order, m.volume)
    return m


def build_torus(n, tau=1j):
    """Uniform periodic grid on C/(Z + tau Z) in lattice coordinates.

    Args:
        n: grid points per axis, at least 8.
        tau: modulus, must lie strictly in the upper half plane.
    """
    if n < MIN_RESOLUTION:
        raise GridTooCoarse(f"n = {n} below minimum {MIN_RESOLUTION}")
    tau = complex(tau)
    if not np.isfinite(tau.real) or not np.isfinite(tau.imag) or tau.imag <= 0:
        raise InvalidModulus(f"modulus {tau} not in the upper half plane")
    h = 1.0 / n
    axis = (np.arange(n) + 0.5) * h
    s, t = np.meshgrid(axis, axis, indexing="ij")
    coord = s + tau * t
    ones = np.ones((n, n))
    chart = Chart(index=0, coord=coord, density=ones,
                  weight=np.full((n, n), tau.imag * h * h),
                  owned=np.ones((n, n), dtype=bool),
                  pde=np.ones((n, n), dtype=bool))
    return BaseManifold("torus", n, h, [chart], tau=tau)


@dataclass
class HeatRun:
    times: np.ndarray
    sup: np.ndarray
    inf: np.ndarray
    mean: np.ndarray
    final: list
    dt: float


def scalar_heat_run(manifold, u0, t_end, dt=None, record_every=1):
    """Explicit heat evolution du/dt = 2 laplacian(u).

    Args:
        manifold: BaseManifold.
        u0: initial scalar field (list of chart arrays).
        t_end: evolution time.
        dt: explicit step; default from the manifold's conservative rule.
        record_every: steps between series records.

    Returns:
        HeatRun with owned-region sup/inf and weighted mean series.

    Raises:
        UnstableTimestep: if dt exceeds the stability bound up front, or if
            the sup norm grows by more than one percent between records.
    """
    manifold.check_field(u0)
    bound = manifold.heat_stability_dt()
    if dt is None:
        dt = manifold.default_heat_dt()
    if dt > bound * (1.0 + 1e-9):
        raise UnstableTimestep(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")
    steps = max(int(np.ceil(t_end / dt - 1e-12)), 1)
    u = [arr.astype(float).copy() for arr in u0]
    times, sups, infs, means = [], [], [], []

    def record(tcur):
        times.append(tcur)
        sups.append(manifold.owned_max(u))
        infs.append(manifold.owned_min(u))
        means.append(manifold.mean(u))

    record(0.0)
    prev_amp = max(abs(sups[0]), abs(infs[0]))
    for k in range(steps):
        lap = manifold.laplacian(u)
        u = [arr + 2.0 * dt * lp for arr, lp in zip(u, lap)]
        if (k + 1) % record_every == 0 or k == steps - 1:
            record((k + 1) * dt)
            amp = max(abs(sups[-1]), abs(infs[-1]))
            if amp > 1.01 * prev_amp + 1e-12:
                raise UnstableTimestep(
                    f"sup grew from {prev_amp:.3e} to {amp:.3e} at t={times[-1]:.3e}")
            prev_amp = max(prev_amp, amp)
    return HeatRun(times=np.array(times), sup=np.array(sups), inf=np.array(infs),
                   mean=np.array(means), final=u, dt=dt)

"""Bundle metrics and curvature against closed-form oracles.

Oracles: constant curvature of the Fubini-Study powers, the hand-computed
curvature of the nonsplit torus extension (exact on the grid because every
entry is a polynomial of degree two in the coordinates), exact fiber algebra
for induced bundles, and a discrete Chern-Weil value computable in closed
form for a rotating projection.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hymlab.bundles import (
    base_metric,
    catalog_bundle,
    catalog_tags,
    chern_connection,
    conformal_negativize,
    conformal_scale,
    degree,
    dual_metric,
    dual_presentation,
    endo_sup_norm_sq,
    hom_modes,
    hym_lambda,
    induced_curvature,
    induced_embedding,
    induced_metric,
    induced_presentation,
    initial_metric,
    mean_curvature,
    projection_check,
    scalar_modes,
    spectrum_field,
    spectrum_stats,
    subsheaf_degree,
)
from hymlab.errors import (
    Infeasible,
    KTooLarge,
    NotAProjection,
    PresentationMismatch,
    UnknownTag,
)
from hymlab.manifolds import build_cp1, build_torus


@pytest.fixture(scope="module")
def cp1_64():
    return build_cp1(64)


@pytest.fixture(scope="module")
def cp1_32():
    return build_cp1(32)


@pytest.fixture(scope="module")
def torus_32():
    return build_torus(32)


def height_field(m, scale=1.0):
    f = []
    for chart in m.charts:
        r2 = np.abs(chart.coord) ** 2
        val = scale * (1.0 - r2) / (1.0 + r2)
        f.append(val if chart.index == 0 else -val)
    return f


def sup_owned(m, fields):
    return max(np.abs(arr[chart.owned]).max()
               for chart, arr in zip(m.charts, fields))


def constant_projection(m, r, k):
    pi = [np.zeros((m.n, m.n, r, r), dtype=np.complex128) for _ in m.charts]
    for arr in pi:
        for i in range(k):
            arr[..., i, i] = 1.0
    return pi


class TestCatalog:
    def test_tags_cover_grammar(self):
        assert set(catalog_tags()) == {
            "O(d)", "O(a)+O(b)+...", "T", "flat(r)", "atiyah"}

    def test_split_tag(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(3)+O(-1)")
        assert p.rank == 2
        assert p.degrees == (3, -1)
        assert p.limit_spectrum == (6.0, -2.0)

    def test_tangent_tag(self, cp1_64):
        p = catalog_bundle(cp1_64, "T")
        assert p.rank == 1 and p.degrees == (2,) and p.signs == (-1.0,)

    def test_torus_tags(self, torus_32):
        assert catalog_bundle(torus_32, "flat(3)").rank == 3
        p = catalog_bundle(torus_32, "atiyah")
        assert p.rank == 2
        assert np.allclose(p.automorphy[1], [[1.0, 1.0], [0.0, 1.0]])

    def test_unknown_tags(self, cp1_64, torus_32):
        for bad in ("O(x)", "sym2", "flat(0)", ""):
            with pytest.raises(UnknownTag):
                catalog_bundle(cp1_64 if "O" in bad else torus_32, bad)

    def test_wrong_base(self, cp1_64, torus_32):
        with pytest.raises(PresentationMismatch):
            catalog_bundle(torus_32, "O(2)")
        with pytest.raises(PresentationMismatch):
            catalog_bundle(cp1_64, "flat(2)")
        with pytest.raises(PresentationMismatch):
            catalog_bundle(cp1_64, "atiyah")


class TestCurvature:
    def test_fs_line(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(3)")
        theta = mean_curvature(p, base_metric(p))
        assert sup_owned(cp1_64, [t - 6.0 for t in theta]) <= 0.1

    def test_fs_second_order(self, cp1_32, cp1_64):
        errs = []
        for m in (cp1_32, cp1_64):
            p = catalog_bundle(m, "O(3)")
            theta = mean_curvature(p, base_metric(p))
            errs.append(sup_owned(m, [t - 6.0 for t in theta]))
        assert errs[0] / errs[1] > 3.0

    def test_tangent_bundle(self, cp1_64):
        p = catalog_bundle(cp1_64, "T")
        theta = mean_curvature(p, base_metric(p))
        assert sup_owned(cp1_64, [t - 4.0 for t in theta]) <= 0.05

    def test_split_degree(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(3)+O(-1)")
        assert degree(p, base_metric(p)) == pytest.approx(2.0, abs=0.01)
        assert hym_lambda(p) == pytest.approx(2.0, abs=0.01)

    def test_flat_torus_vanishes(self, torus_32):
        p = catalog_bundle(torus_32, "flat(2)")
        theta = mean_curvature(p, base_metric(p))
        assert max(np.abs(t).max() for t in theta) <= 1e-14

    @pytest.mark.parametrize("tau", [1j, 0.3 + 0.8j])
    def test_atiyah_exact(self, tau):
        # entries are quadratics of the grid coordinate, so the stencils
        # reproduce the hand computation to machine precision, twists included
        m = build_torus(32, tau=tau)
        p = catalog_bundle(m, "atiyah")
        h = base_metric(p)
        c = 1.0 / (2.0 * tau.imag**2)
        tpar = m.charts[0].coord.imag / tau.imag
        oracle = np.zeros((m.n, m.n, 2, 2), dtype=np.complex128)
        oracle[..., 0, 0] = c
        oracle[..., 0, 1] = -2.0 * c * tpar
        oracle[..., 1, 1] = -c
        for symmetrize in (False, True):
            theta = mean_curvature(p, h, symmetrize=symmetrize)
            assert np.abs(theta[0] - oracle).max() <= 1e-12
        lam = spectrum_field(p, h)
        assert np.abs(lam[0][..., 0] - c).max() <= 1e-12
        assert np.abs(lam[0][..., 1] + c).max() <= 1e-12
        assert abs(degree(p, h)) <= 1e-12

    def test_self_adjoint_defect(self, cp1_64):
        # raw stencil output misses H-self-adjointness at second order only
        p = catalog_bundle(cp1_64, "O(2)+O(0)")
        h = initial_metric(p, seed=5, amplitude=0.8)
        theta = mean_curvature(p, h, symmetrize=False)
        hr = p.refresh_metric(h)
        defect = 0.0
        for chart, t, ha in zip(cp1_64.charts, theta, hr):
            hinv = np.linalg.inv(ha)
            d = t - hinv @ np.conj(np.swapaxes(t, -1, -2)) @ ha
            defect = max(defect, np.abs(d[chart.owned]).max())
        assert defect <= 0.1

    def test_chern_connection(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(2)")
        a = chern_connection(p, base_metric(p))
        chart = cp1_64.charts[0]
        exact = -2.0 * np.conj(chart.coord) / (1.0 + np.abs(chart.coord) ** 2)
        err = np.abs(a[0][..., 0, 0][chart.pde] - exact[chart.pde]).max()
        assert err <= 0.01


class TestConformal:
    def test_shift_law_cp1(self, cp1_32, cp1_64):
        errs = []
        for m in (cp1_32, cp1_64):
            p = catalog_bundle(m, "O(1)+O(-1)")
            h = base_metric(p)
            f = height_field(m, 0.7)
            before = mean_curvature(p, h)
            after = mean_curvature(p, conformal_scale(p, h, f))
            lap = m.laplacian(f)
            eye = np.eye(2)
            diff = [a - (b - lp[..., None, None] * eye)
                    for a, b, lp in zip(after, before, lap)]
            errs.append(sup_owned(m, diff))
        assert errs[1] <= 0.06
        assert errs[0] / errs[1] > 3.0

    def test_shift_law_torus(self):
        errs = []
        for n in (32, 64):
            m = build_torus(n)
            p = catalog_bundle(m, "flat(1)")
            ax = (np.arange(n) + 0.5) / n
            s, t = np.meshgrid(ax, ax, indexing="ij")
            f = [0.5 * np.cos(2 * np.pi * s) + 0.3 * np.sin(2 * np.pi * (s + t))]
            theta = mean_curvature(p, conformal_scale(p, base_metric(p), f))
            lap = m.laplacian(f)
            errs.append(np.abs(theta[0][..., 0, 0] + lap[0]).max())
        assert errs[0] <= 0.6
        assert errs[0] / errs[1] > 3.0

    def test_negativize_line(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(-2)")
        h = conformal_scale(p, base_metric(p), height_field(cp1_32, 1.5))
        stats = spectrum_stats(p, h)
        assert stats.sup[0] > 0.0 and stats.mean_desc[0] < 0.0
        new_h, f, achieved = conformal_negativize(p, h)
        assert achieved < 0.0
        assert achieved <= stats.mean_desc[0] + 0.3
        after = spectrum_stats(p, new_h)
        assert after.sup[0] == pytest.approx(achieved)
        # the correction flattens the top eigenvalue up to stencil mismatch
        assert after.sup[0] - after.inf[0] <= 0.4

    def test_negativize_flattening_refines(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(-2)")
        h = conformal_scale(p, base_metric(p), height_field(cp1_64, 1.5))
        new_h, _, achieved = conformal_negativize(p, h)
        after = spectrum_stats(p, new_h)
        assert achieved <= spectrum_stats(p, h).mean_desc[0] + 0.08
        assert after.sup[0] - after.inf[0] <= 0.1

    def test_negativize_rank2(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(-1)+O(-3)")
        h = initial_metric(p, seed=11, amplitude=1.0)
        stats = spectrum_stats(p, h)
        assert stats.sup[0] > 0.0
        _, _, achieved = conformal_negativize(p, h)
        assert achieved < 0.0
        assert achieved <= stats.mean_desc[0] + 0.3

    def test_negativize_noop_when_negative(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(-1)")
        h = base_metric(p)
        new_h, f, achieved = conformal_negativize(p, h)
        assert achieved < 0.0
        assert max(np.abs(fa).max() for fa in f) == 0.0
        assert all(np.array_equal(a, b) for a, b in zip(new_h, h))

    def test_negativize_infeasible(self, cp1_32, torus_32):
        p = catalog_bundle(cp1_32, "O(1)")
        with pytest.raises(Infeasible):
            conformal_negativize(p, base_metric(p))
        # mean exactly zero is infeasible too
        pf = catalog_bundle(torus_32, "flat(1)")
        ax = (np.arange(32) + 0.5) / 32
        s, _ = np.meshgrid(ax, ax, indexing="ij")
        h = conformal_scale(pf, base_metric(pf), [0.4 * np.cos(2 * np.pi * s)])
        with pytest.raises(Infeasible):
            conformal_negativize(pf, h)


class TestSpectrum:
    def test_split_statistics(self, cp1_64):
        # pointwise eigenvalues (4, 0), so top sums run (4, 4) and
        # bottom sums (0, 4)
        p = catalog_bundle(cp1_64, "O(2)+O(0)")
        stats = spectrum_stats(p, base_metric(p))
        for got, want in ((stats.sup, (4.0, 4.0)), (stats.inf, (0.0, 4.0)),
                          (stats.mean_desc, (4.0, 4.0)),
                          (stats.mean_asc, (0.0, 4.0))):
            assert np.allclose(got, want, atol=0.1)
        assert stats.mean_desc == pytest.approx(
            np.cumsum(p.limit_spectrum), abs=0.1)

    def test_statistics_ordering(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(1)+O(-2)")
        stats = spectrum_stats(p, initial_metric(p, seed=4, amplitude=1.0))
        assert np.all(stats.sup >= stats.mean_desc)
        assert np.all(stats.mean_desc >= stats.mean_asc)
        assert np.all(stats.mean_asc >= stats.inf)
        # both full sums are the trace, integrated with the same weights
        assert stats.mean_desc[-1] == pytest.approx(stats.mean_asc[-1],
                                                    rel=1e-12, abs=1e-12)

    def test_dual_statistics(self, cp1_64):
        # dual eigenvalues negate and reverse, so top sums of the dual are
        # minus the bottom sums of the primal at the same k
        p = catalog_bundle(cp1_64, "O(2)+O(0)")
        h = initial_metric(p, seed=5, amplitude=0.8)
        stats = spectrum_stats(p, h)
        dstats = spectrum_stats(dual_presentation(p), dual_metric(h))
        assert dstats.sup == pytest.approx(-stats.inf, abs=0.05)
        assert dstats.mean_desc == pytest.approx(-stats.mean_asc, abs=0.05)

    def test_dual_pointwise_exact(self, cp1_64):
        # the algebraic dual is minus the transpose, an exact similarity
        p = catalog_bundle(cp1_64, "O(2)+O(0)")
        h = initial_metric(p, seed=5, amplitude=0.8)
        theta = mean_curvature(p, h)
        lam = spectrum_field(p, h, theta=theta)
        dlam = spectrum_field(dual_presentation(p), dual_metric(h),
                              theta=induced_curvature(p, theta, "dual"))
        err = max(np.abs(d + l[..., ::-1]).max() for d, l in zip(dlam, lam))
        assert err <= 1e-10

    def test_dual_stencil_route(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(2)+O(0)")
        h = initial_metric(p, seed=5, amplitude=0.8)
        alg = induced_curvature(p, mean_curvature(p, h), "dual")
        sten = mean_curvature(dual_presentation(p), dual_metric(h))
        assert sup_owned(cp1_64, [a - b for a, b in zip(alg, sten)]) <= 0.15

    def test_endo_norm(self, torus_32):
        p = catalog_bundle(torus_32, "flat(2)")
        h = initial_metric(p, seed=2, amplitude=0.5)
        phi = [np.broadcast_to((1.5 + 0.5j) * np.eye(2), (32, 32, 2, 2)).copy()]
        # |c Id|^2 = r |c|^2 in any metric
        assert endo_sup_norm_sq(p, h, phi) == pytest.approx(5.0, rel=1e-12)


class TestSubsheaf:
    def test_holomorphic_summand(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(1)+O(-1)")
        pi = constant_projection(cp1_64, 2, 1)
        val = subsheaf_degree(p, base_metric(p), pi)
        assert val == pytest.approx(1.0, abs=0.01)

    def test_rotating_projection_closed_form(self, torus_32):
        # tr(pi theta) = 0 and the correction integrand is constant; centered
        # differences scale it by exactly (sin(4 pi h)/(4 pi h))^2
        p = catalog_bundle(torus_32, "flat(2)")
        ax = (np.arange(32) + 0.5) / 32
        s, _ = np.meshgrid(ax, ax, indexing="ij")
        phi = 2.0 * np.pi * s
        pi = np.zeros((32, 32, 2, 2), dtype=np.complex128)
        pi[..., 0, 0] = np.cos(phi) ** 2
        pi[..., 0, 1] = np.cos(phi) * np.sin(phi)
        pi[..., 1, 0] = pi[..., 0, 1]
        pi[..., 1, 1] = np.sin(phi) ** 2
        hh = 1.0 / 32
        rho = np.sin(4.0 * np.pi * hh) / (4.0 * np.pi * hh)
        val = subsheaf_degree(p, base_metric(p), [pi])
        assert val == pytest.approx(-2.0 * np.pi * rho**2, abs=1e-12)

    def test_rejects_non_idempotent(self, torus_32):
        p = catalog_bundle(torus_32, "flat(2)")
        pi = constant_projection(torus_32, 2, 1)
        pi[0][..., 0, 0] = 0.5
        with pytest.raises(NotAProjection):
            subsheaf_degree(p, base_metric(p), pi)

    def test_rejects_skew_projection(self, torus_32):
        # idempotent but not self-adjoint for the flat metric
        p = catalog_bundle(torus_32, "flat(2)")
        pi = constant_projection(torus_32, 2, 1)
        pi[0][..., 0, 1] = 0.5
        with pytest.raises(NotAProjection):
            projection_check(p, base_metric(p), pi)


class TestInitialMetric:
    def test_zero_amplitude_is_base(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(2)+O(-1)")
        h = initial_metric(p, amplitude=0.0)
        assert all(np.array_equal(a, b) for a, b in zip(h, base_metric(p)))

    def test_deterministic(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(2)+O(-1)")
        a = initial_metric(p, seed=7, amplitude=1.2)
        b = initial_metric(p, seed=7, amplitude=1.2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_positive_definite(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(2)+O(-1)")
        h = initial_metric(p, seed=7, amplitude=1.2)
        assert min(np.linalg.eigvalsh(arr).min() for arr in h) > 0.0

    def test_transition_compatible(self, cp1_64):
        # band values equal the interpolated partner frame to interp accuracy
        p = catalog_bundle(cp1_64, "O(2)+O(-1)")
        h = initial_metric(p, seed=7, amplitude=1.2)
        hr = p.refresh_metric(h)
        assert max(np.abs(a - b).max() for a, b in zip(hr, h)) <= 5e-4

    def test_degree_invariant(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(2)+O(-1)")
        h = initial_metric(p, seed=7, amplitude=1.2)
        assert degree(p, h) == pytest.approx(1.0, abs=0.01)

    def test_atiyah_respects_twists(self):
        # curvature of a perturbed metric stays bounded under refinement;
        # automorphy violations blow up like 1/h^2 at the wrap rows
        sups = []
        for n in (32, 64):
            p = catalog_bundle(build_torus(n), "atiyah")
            h = initial_metric(p, seed=3, amplitude=0.7)
            theta = mean_curvature(p, h)
            sups.append(max(np.abs(t).max() for t in theta))
            assert abs(degree(p, h)) <= 1e-10
        assert 0.8 <= sups[1] / sups[0] <= 1.25

    def test_hom_mode_seam_consistency(self, cp1_64):
        # two independent derivations of the transition rule: mode formulas
        # per chart versus the seam factors applied to interpolated data
        p = catalog_bundle(cp1_64, "O(1)+O(0)")
        for mode in hom_modes(p, 1, max_power=2)[:3]:
            phi = [np.zeros((64, 64, 2, 2), dtype=np.complex128)
                   for _ in cp1_64.charts]
            for ci in range(2):
                phi[ci][..., 0, 1] = mode[ci]
            phir = p.refresh_endo(phi)
            assert max(np.abs(a - b).max() for a, b in zip(phir, phi)) <= 1e-4

    def test_scalar_modes_global(self, cp1_64):
        p = catalog_bundle(cp1_64, "O(0)")
        for f in scalar_modes(p, max_power=2)[:4]:
            fr = cp1_64.refresh(f)
            assert max(np.abs(a - b).max() for a, b in zip(fr, f)) <= 1e-4


class TestInduced:
    @pytest.mark.parametrize("r,k,op", [
        (2, 2, "sym"), (3, 2, "sym"), (2, 3, "sym"),
        (2, 2, "ext"), (3, 2, "ext"), (3, 3, "ext"), (4, 2, "ext")])
    def test_embedding_isometry(self, r, k, op):
        p = induced_embedding(r, k, op)
        assert np.abs(np.conj(p).T @ p - np.eye(p.shape[1])).max() <= 1e-12

    def test_embedding_guards(self):
        with pytest.raises(KTooLarge):
            induced_embedding(2, 3, "ext")
        with pytest.raises(KTooLarge):
            induced_embedding(2, 0, "sym")
        with pytest.raises(UnknownTag):
            induced_embedding(2, 2, "tensor")

    def test_sym2_metric_is_fs(self, cp1_32):
        # Sym^2 of O(a)+O(b) carries the split metric of degrees 2a, a+b, 2b
        p = catalog_bundle(cp1_32, "O(1)+O(-1)")
        q = induced_presentation(p, "sym", 2)
        assert q.degrees == (2, 0, -2)
        got = induced_metric(p, base_metric(p), "sym", 2)
        want = base_metric(q)
        assert max(np.abs(a - b).max() for a, b in zip(got, want)) <= 1e-12

    def test_ext2_is_determinant(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(2)+O(-1)")
        q = induced_presentation(p, "ext", 2)
        assert q.rank == 1 and q.degrees == (1,)
        got = induced_metric(p, base_metric(p), "ext", 2)
        dets = [np.linalg.det(arr) for arr in base_metric(p)]
        err = max(np.abs(g[..., 0, 0] - d).max() for g, d in zip(got, dets))
        assert err <= 1e-12

    def test_end_presentation(self, cp1_32):
        p = catalog_bundle(cp1_32, "O(2)+O(0)")
        q = induced_presentation(p, "end")
        assert q.rank == 4
        assert sorted(q.degrees) == [-2, 0, 0, 2]
        assert q.limit_spectrum == (4.0, 0.0, 0.0, -4.0)

    def test_end_curvature_is_commutator(self, torus_32):
        rng = np.random.default_rng(0)
        p = catalog_bundle(torus_32, "flat(2)")
        t = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        theta = np.broadcast_to(t + np.conj(t).T, (32, 32, 2, 2)).copy()
        phi = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        end = induced_curvature(p, [theta], "end")[0]
        acted = (end[0, 0] @ phi.reshape(4)).reshape(2, 2)
        want = theta[0, 0] @ phi - phi @ theta[0, 0]
        assert np.abs(acted - want).max() <= 1e-12

    def test_stencil_vs_algebraic_sym2(self, cp1_32, cp1_64):
        # two routes to the same curvature: stencils on the induced metric
        # against fiber algebra on the stencil curvature of the base
        errs = []
        for m in (cp1_32, cp1_64):
            p = catalog_bundle(m, "O(1)+O(-1)")
            h = initial_metric(p, seed=9, amplitude=0.8)
            alg = induced_curvature(p, mean_curvature(p, h), "sym", 2)
            sten = mean_curvature(induced_presentation(p, "sym", 2),
                                  induced_metric(p, h, "sym", 2))
            errs.append(sup_owned(m, [a - b for a, b in zip(alg, sten)]))
        assert errs[1] <= 0.2
        assert errs[0] / errs[1] > 3.0

    def test_induced_on_atiyah_rejected(self, torus_32):
        p = catalog_bundle(torus_32, "atiyah")
        with pytest.raises(PresentationMismatch):
            induced_presentation(p, "sym", 2)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 3))
    @settings(max_examples=40, deadline=None)
    def test_power_spectra_compose(self, seed, r):
        # eigenvalues of the slot-sum curvature are sums of base eigenvalues
        # over the multi-index basis, for both powers
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r))
        theta = np.broadcast_to(0.5 * (a + np.conj(a).T), (1, 1, r, r)).copy()
        lam = np.linalg.eigvalsh(theta[0, 0])
        for op, pick in (("sym", False), ("ext", True)):
            k = 2
            out = induced_curvature(
                _DummyPres(r), [theta], op, k)[0][0, 0]
            got = np.sort(np.linalg.eigvalsh(out))
            if pick:
                want = np.sort([lam[i] + lam[j]
                                for i in range(r) for j in range(i + 1, r)])
            else:
                want = np.sort([lam[i] + lam[j]
                                for i in range(r) for j in range(i, r)])
            assert np.abs(got - want).max() <= 1e-9 * (1.0 + np.abs(lam).max())


class _DummyPres:
    def __init__(self, rank):
        self.rank = rank

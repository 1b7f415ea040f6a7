"""Metric flow against symbol-level and energy-balance oracles.

Oracles: exact per-step decay of a single lattice mode on the flat torus
(the scalar update composes centered differences, so the discrete symbol
gives the decay factor in closed form), the time integral of the curvature
energy against the drop of the L2 size of the deviation, the slope vector
of the unstable split bundle, and exact contraction of the two-solution
distance.
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid

from hymlab.bundles import (
    base_metric,
    catalog_bundle,
    hym_lambda,
    initial_metric,
)
from hymlab.errors import UnstableTimestep
from hymlab.flow import (
    compare_flows,
    conservation_residuals,
    metric_distance,
    normalize_trace,
    run_flow,
    series_header,
)
from hymlab.manifolds import build_cp1, build_torus


def monotone_slack(values):
    return 1e-8 * (1.0 + np.abs(values))


@pytest.fixture(scope="module")
def cp1_32():
    return build_cp1(32)


@pytest.fixture(scope="module")
def torus_16():
    return build_torus(16, 1j)


@pytest.fixture(scope="module")
def o2_flow(cp1_32):
    pres = catalog_bundle(cp1_32, "O(2)")
    h = initial_metric(pres, seed=6, amplitude=1.0)
    dt = 3.0 * cp1_32.heat_stability_dt()
    return pres, run_flow(pres, h, t_end=0.8, dt=dt, record_every=8)


@pytest.fixture(scope="module")
def split_flow(cp1_32):
    pres = catalog_bundle(cp1_32, "O(1)+O(-1)")
    h = initial_metric(pres, seed=1, amplitude=1.0)
    dt = 3.0 * cp1_32.heat_stability_dt()
    return pres, run_flow(pres, h, t_end=1.0, dt=dt, record_every=8)


class TestSchema:
    def test_header_layout(self):
        assert series_header(2) == [
            "t",
            "lamhat_L_1", "lamhat_L_2",
            "lamhat_U_1", "lamhat_U_2",
            "lam_mL_1", "lam_mL_2",
            "lam_mU_1", "lam_mU_2",
            "sup_phi_sq", "energy_dtheta", "det_residual", "tr_residual",
        ]

    def test_columns_match_header(self, split_flow):
        _, res = split_flow
        header, table = res.series.as_columns()
        assert header == series_header(2)
        assert table.shape == (len(res.series.times), len(header))
        np.testing.assert_array_equal(table[:, 0], res.series.times)
        np.testing.assert_array_equal(table[:, 3], res.series.lamhat_U[:, 0])
        np.testing.assert_array_equal(table[:, -1], res.series.tr_residual)


MODE_K = 2
MODE_A0 = 1e-5
MODE_STEPS = 40


def mode_sigma(n):
    h = 1.0 / n
    return np.sin(2 * np.pi * MODE_K * h) ** 2 / h**2


@pytest.fixture(scope="module")
def decay_run(torus_16):
    pres = catalog_bundle(torus_16, "flat(1)")
    s = torus_16.charts[0].coord.real
    u = MODE_A0 * np.cos(2 * np.pi * MODE_K * s)
    h = [base_metric(pres)[0] * np.exp(u)[..., None, None]]
    dt = 0.5 * torus_16.heat_stability_dt()
    res = run_flow(pres, h, t_end=MODE_STEPS * dt, dt=dt,
                   record_every=1, normalize=False)
    assert res.steps == MODE_STEPS
    return pres, res, s, dt


class TestModeDecay:
    """One cosine mode on the flat line bundle decays by the stencil symbol.

    The exponential update of a rank-one metric is exactly
    u <- u - 2 dt (theta(e^u) - lam), and theta linearizes to the composed
    difference operator, so mode k shrinks by 1 - dt sin(2 pi k h)^2 / h^2
    per step up to quadratic remainders in the tiny amplitude.
    """

    def test_final_field_matches_symbol(self, decay_run):
        pres, res, s, dt = decay_run
        amp = MODE_A0 * (1.0 - dt * mode_sigma(16)) ** MODE_STEPS
        u_pred = amp * np.cos(2 * np.pi * MODE_K * s)
        u_fin = np.log(np.real(res.h_final[0][..., 0, 0])
                       / np.real(base_metric(pres)[0][..., 0, 0]))
        assert np.abs(u_fin - u_pred).max() <= 1e-4 * amp

    def test_envelope_tracks_amplitude(self, decay_run):
        _, res, s, dt = decay_run
        sig = mode_sigma(16)
        crest = np.abs(np.cos(2 * np.pi * MODE_K * s)).max()
        for j in (5, 10, 25):
            amp = MODE_A0 * (1.0 - dt * sig) ** j
            pred = 0.5 * sig * amp * crest
            assert res.series.lamhat_U[j, 0] == pytest.approx(pred, rel=1e-4)


class TestStableLine:
    """Degree-two line bundle: the flow reaches the constant-curvature metric."""

    def test_upper_envelope_decreases(self, o2_flow):
        _, res = o2_flow
        top = res.series.lamhat_U[:, 0]
        assert (np.diff(top) <= monotone_slack(top[:-1])).all()

    def test_lower_envelope_increases(self, o2_flow):
        _, res = o2_flow
        bot = res.series.lamhat_L[:, 0]
        assert (np.diff(bot) >= -monotone_slack(bot[:-1])).all()

    def test_sup_deviation_decreases(self, o2_flow):
        _, res = o2_flow
        s = res.series.sup_phi_sq
        assert (np.diff(s) <= monotone_slack(s[:-1])).all()

    def test_converges_to_constant_curvature(self, o2_flow):
        _, res = o2_flow
        assert res.series.sup_phi_sq[-1] <= 2e-5
        assert abs(res.series.lamhat_U[-1, 0] - res.lam) <= 0.01
        assert abs(res.series.lamhat_L[-1, 0] - res.lam) <= 0.01

    def test_rank_one_trace_is_whole_deviation(self, o2_flow):
        # for a line bundle tr(Phi) is Phi itself
        _, res = o2_flow
        np.testing.assert_allclose(res.series.tr_residual**2,
                                   res.series.sup_phi_sq, rtol=1e-9)

    def test_residuals_stay_small(self, o2_flow):
        _, res = o2_flow
        assert res.series.det_residual.max() <= 0.04
        assert res.series.tr_residual[-1] <= 0.01

    def test_energy_balance(self, o2_flow):
        # d/dt of the L2 size of the deviation is -2x the curvature energy
        _, res = o2_flow
        s = res.series
        drop = 0.5 * (s.l2_phi_sq[0] - s.l2_phi_sq[-1])
        integral = trapezoid(s.energy_dtheta, s.times)
        assert integral == pytest.approx(drop, rel=0.03)


class TestUnstableSplit:
    """Split bundle with distinct degrees: no flat limit, slopes split instead."""

    def test_flat_limit_blocked(self, split_flow):
        _, res = split_flow
        # sup|Phi|^2 stalls at the sum of squared slope deviations, 4 + 4
        assert res.series.sup_phi_sq[-1] == pytest.approx(8.0, abs=0.3)

    def test_slope_vector_emerges(self, split_flow):
        # slopes 2 and -2, so top sums tend to (2, 0) and bottom sums to
        # (-2, 0); the full sums are the trace, pinned near zero throughout
        _, res = split_flow
        np.testing.assert_allclose(res.series.lam_mU[-1], [2.0, 0.0],
                                   atol=0.05)
        np.testing.assert_allclose(res.series.lamhat_U[-1], [2.0, 0.0],
                                   atol=0.05)
        np.testing.assert_allclose(res.series.lamhat_L[-1], [-2.0, 0.0],
                                   atol=0.05)

    def test_envelopes_monotone_every_k(self, split_flow):
        # the maximum principle applies to every running sum, not just the
        # extreme eigenvalues: upper statistics fall, lower ones rise
        _, res = split_flow
        s = res.series
        for arr in (s.lamhat_U, s.lam_mU):
            assert (np.diff(arr, axis=0)
                    <= monotone_slack(arr[:-1])).all()
        for arr in (s.lamhat_L, s.lam_mL):
            assert (np.diff(arr, axis=0)
                    >= -monotone_slack(arr[:-1])).all()

    def test_energy_balance(self, split_flow):
        _, res = split_flow
        s = res.series
        drop = 0.5 * (s.l2_phi_sq[0] - s.l2_phi_sq[-1])
        integral = trapezoid(s.energy_dtheta, s.times)
        assert integral == pytest.approx(drop, rel=0.01)

    def test_trace_residual_decays(self, split_flow):
        _, res = split_flow
        assert res.series.tr_residual[-1] <= 0.1 * res.series.tr_residual[0]


class TestContraction:
    def test_distance_between_solutions_decreases(self, cp1_32):
        pres = catalog_bundle(cp1_32, "O(2)")
        h_a = initial_metric(pres, seed=6, amplitude=1.0)
        h_b = initial_metric(pres, seed=7, amplitude=0.7)
        dt = 3.0 * cp1_32.heat_stability_dt()
        times, dists = compare_flows(pres, h_a, h_b, t_end=0.5, dt=dt,
                                     record_every=20)
        assert (np.diff(dists) <= 1e-10 * (1.0 + dists[:-1])).all()
        assert dists[-1] <= 0.15 * dists[0]

    def test_identical_solutions_stay_identical(self, cp1_32):
        pres = catalog_bundle(cp1_32, "O(2)")
        h = initial_metric(pres, seed=6, amplitude=1.0)
        _, dists = compare_flows(pres, h, [np.array(c) for c in h],
                                 t_end=0.05)
        assert dists.max() == 0.0


class TestGuards:
    def test_rejects_oversized_timestep(self, torus_16):
        pres = catalog_bundle(torus_16, "flat(1)")
        with pytest.raises(UnstableTimestep, match="diffusion bound"):
            run_flow(pres, base_metric(pres), t_end=0.1,
                     dt=5.0 * torus_16.heat_stability_dt())

    def test_detects_blowup(self, torus_16):
        pres = catalog_bundle(torus_16, "flat(1)")
        s = torus_16.charts[0].coord.real
        u = 2.0 * np.cos(2 * np.pi * 4 * s)
        h = [base_metric(pres)[0] * np.exp(u)[..., None, None]]
        with pytest.raises(UnstableTimestep, match="grew"):
            run_flow(pres, h, t_end=0.01,
                     dt=3.7 * torus_16.heat_stability_dt(), normalize=False)

    def test_default_timestep_tames_rough_start(self, torus_16):
        # same start as the blowup case; the sup-clamped default step holds
        pres = catalog_bundle(torus_16, "flat(1)")
        s = torus_16.charts[0].coord.real
        u = 2.0 * np.cos(2 * np.pi * 4 * s)
        h = [base_metric(pres)[0] * np.exp(u)[..., None, None]]
        res = run_flow(pres, h, t_end=0.01, normalize=False)
        assert res.dt < torus_16.heat_stability_dt()
        assert res.series.sup_phi_sq[-1] < 1e-3 * res.series.sup_phi_sq[0]


class TestNormalization:
    def test_projection_shrinks_trace_defect(self, torus_16):
        pres = catalog_bundle(torus_16, "flat(2)")
        h = initial_metric(pres, seed=4, amplitude=0.5)
        lam = hym_lambda(pres, h)
        _, before = conservation_residuals(pres, h, h, lam)
        h_norm, _ = normalize_trace(pres, h, lam)
        _, after = conservation_residuals(pres, h_norm, h_norm, lam)
        assert after <= 0.2 * before

    def test_projection_shrinks_trace_defect_cp1(self, cp1_32):
        pres = catalog_bundle(cp1_32, "O(2)")
        h = initial_metric(pres, seed=6, amplitude=1.0)
        lam = hym_lambda(pres, h)
        _, before = conservation_residuals(pres, h, h, lam)
        h_norm, _ = normalize_trace(pres, h, lam)
        _, after = conservation_residuals(pres, h_norm, h_norm, lam)
        assert after <= 0.1 * before

    def test_distance_diagnostic_separates_points(self, torus_16):
        pres = catalog_bundle(torus_16, "flat(2)")
        h_a = initial_metric(pres, seed=4, amplitude=0.5)
        h_b = initial_metric(pres, seed=5, amplitude=0.5)
        assert metric_distance(pres, h_a, h_a) == 0.0
        assert metric_distance(pres, h_a, h_b) > 0.01


class TestSemistableExtension:
    def test_nonsplit_extension_flattens_slowly(self):
        # degree zero but nonsplit: the deviation decays without a spectral
        # gap, reaching small values only at long times
        m = build_torus(16, 0.3 + 0.8j)
        pres = catalog_bundle(m, "atiyah")
        h = initial_metric(pres, seed=2, amplitude=0.3)
        res = run_flow(pres, h, t_end=0.3, record_every=10)
        s = res.series.sup_phi_sq
        assert (np.diff(s) <= monotone_slack(s[:-1])).all()
        assert 0.0 < s[-1] <= 1.0
        assert s[-1] <= s[0] / 100.0

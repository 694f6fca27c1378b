import math

import numpy as np
import pytest
from scipy.stats import chi2

from searchtrack import (
    CoincidentPositionsError,
    ControlParams,
    Measurement,
    MotionParams,
    Rect,
    SensingParams,
    admissible_controls,
    cv_matrices,
    detection_prob,
    detection_prob_at,
    likelihood,
    measure,
    measurement_sigmas,
    noise_free_measurement,
    target_step,
    transition_density,
    wrap_angle,
)

AREA = Rect(0.0, 100.0, 0.0, 100.0)


def zero_noise_motion(F=None):
    return MotionParams(F=F, Q=np.zeros((4, 4)))


class TestTargetStep:
    def test_noise_free_constant_velocity(self):
        rng = np.random.default_rng(0)
        x = target_step([0.0, 1.0, 0.0, 0.0], zero_noise_motion(), rng)
        assert np.allclose(x, [1.0, 1.0, 0.0, 0.0])

    def test_zero_velocity_fixed_point(self):
        rng = np.random.default_rng(0)
        x = target_step([10.0, 0.0, 10.0, 0.0], zero_noise_motion(), rng)
        assert np.allclose(x, [10.0, 0.0, 10.0, 0.0])

    def test_monte_carlo_mean_matches_deterministic_part(self):
        mp = MotionParams()
        rng = np.random.default_rng(42)
        n = 100_000
        x0 = np.array([0.0, 1.0, 0.0, 2.0])
        samples = target_step(np.tile(x0, (n, 1)), mp, rng)
        expected = mp.F @ x0
        se = np.sqrt(np.diag(mp.Q) / n)
        assert np.all(np.abs(samples.mean(axis=0) - expected) < 3.0 * se)

    def test_samples_match_claimed_gaussian(self):
        # Whiten displacements with the claimed covariance and check each
        # coordinate against N(0, 1) with a chi-square goodness-of-fit test.
        # Four tests at 0.25% each keep the family level at 1%.
        mp = MotionParams()
        rng = np.random.default_rng(7)
        n = 100_000
        x0 = np.array([5.0, -1.0, 20.0, 0.5])
        samples = target_step(np.tile(x0, (n, 1)), mp, rng)
        resid = samples - mp.F @ x0
        L = np.linalg.cholesky(mp.Q)
        z = np.linalg.solve(L, resid.T).T
        bins = 20
        from scipy.stats import norm

        edges = norm.ppf(np.linspace(0.0, 1.0, bins + 1))
        for dim in range(4):
            counts, _ = np.histogram(z[:, dim], bins=edges)
            expected = n / bins
            stat = ((counts - expected) ** 2 / expected).sum()
            assert stat < chi2.ppf(1.0 - 0.0025, df=bins - 1)


class TestTransitionDensity:
    def test_peak_value(self):
        mp = MotionParams()
        x = np.array([0.0, 1.0, 0.0, 2.0])
        peak = (2.0 * math.pi) ** -2 * np.linalg.det(mp.Q) ** -0.5
        assert transition_density(mp.F @ x, x, mp) == pytest.approx(peak, rel=1e-9)

    def test_symmetry_around_mode(self):
        mp = MotionParams()
        x = np.array([3.0, 0.5, -2.0, 1.0])
        d = np.array([0.4, -0.2, 0.1, 0.3])
        assert transition_density(mp.F @ x + d, x, mp) == pytest.approx(
            transition_density(mp.F @ x - d, x, mp), rel=1e-12
        )

    def test_identity_covariance_hand_value(self):
        mp = MotionParams(Q=np.eye(4))
        x = np.zeros(4)
        peak = (2.0 * math.pi) ** -2
        value = transition_density(mp.F @ x + np.array([1.0, 0, 0, 0]), x, mp)
        assert value == pytest.approx(peak * math.exp(-0.5), rel=1e-12)

    def test_default_matrices_match_construction(self):
        F, Q = cv_matrices(1.0)
        mp = MotionParams()
        assert np.array_equal(mp.F, F)
        assert np.array_equal(mp.Q, Q)
        assert F[0, 1] == 1.0 and Q[0, 0] == pytest.approx(1.0 / 3.0)


class TestAdmissibleControls:
    def test_full_action_count_away_from_boundary(self):
        acts = admissible_controls([50.0, 50.0], ControlParams(), AREA)
        assert len(acts) == 17

    def test_degenerate_radius(self):
        acts = admissible_controls([50.0, 50.0], ControlParams(NR=0), AREA)
        assert len(acts) == 1

    def test_corner_actions_filtered(self):
        acts = admissible_controls([0.0, 0.0], ControlParams(), AREA)
        # Only the stay action plus the three headings into the first quadrant
        # survive: 1 + 3 * 2 rings.
        assert len(acts) == 7
        assert np.all(acts >= 0.0)

    def test_stay_action_first(self):
        s = [37.0, 81.0]
        acts = admissible_controls(s, ControlParams(), AREA)
        assert np.allclose(acts[0], s)

    def test_positions_unique(self):
        acts = admissible_controls([50.0, 50.0], ControlParams(NR=3, Ntheta=12), AREA)
        assert len(np.unique(np.round(acts, 9), axis=0)) == len(acts)


class TestDetectionProb:
    def test_max_at_zero_distance(self):
        sp = SensingParams()
        assert detection_prob([50.0, 0, 50.0, 0], [50.0, 50.0], sp) == pytest.approx(0.99)

    def test_continuous_at_r0(self):
        sp = SensingParams()
        inside = detection_prob_at([50.0 + sp.R0 - 1e-9, 50.0], [50.0, 50.0], sp)
        at = detection_prob_at([50.0 + sp.R0, 50.0], [50.0, 50.0], sp)
        assert inside == pytest.approx(sp.pDmax)
        assert at == pytest.approx(sp.pDmax)

    def test_zero_beyond_reach(self):
        sp = SensingParams()
        # 0.99 - 0.003 * (340 - 10) = 0 exactly.
        assert detection_prob_at([390.0, 50.0], [50.0, 50.0], sp) == 0.0

    def test_monotone_and_bounded(self):
        sp = SensingParams(eta=0.03)
        d = np.linspace(0.0, 120.0, 500)
        pd = detection_prob_at(np.column_stack([d, np.zeros_like(d)]), [0.0, 0.0], sp)
        assert np.all(np.diff(pd) <= 1e-12)
        assert np.all((pd >= 0.0) & (pd <= sp.pDmax))


class TestMeasurementModel:
    def test_bearing_convention_pure_x_offset(self):
        # Target due "east" of the agent: the agent sits in the target's -x
        # direction, so the four-quadrant bearing is pi.
        z = noise_free_measurement([60.0, 0, 50.0, 0], [50.0, 50.0])
        assert z == Measurement(pytest.approx(math.pi), pytest.approx(10.0))

    def test_bearing_convention_pure_y_offset(self):
        z = noise_free_measurement([50.0, 0, 57.0, 0], [50.0, 50.0])
        assert z.bearing == pytest.approx(-math.pi / 2.0)
        assert z.range == pytest.approx(7.0)

    def test_range_symmetric_under_swap(self):
        a = noise_free_measurement([10.0, 0, 20.0, 0], [33.0, 47.0])
        b = noise_free_measurement([33.0, 0, 47.0, 0], [10.0, 20.0])
        assert a.range == pytest.approx(b.range)

    def test_coincident_positions_error(self):
        with pytest.raises(CoincidentPositionsError):
            noise_free_measurement([50.0, 1.0, 50.0, 1.0], [50.0, 50.0])

    def test_zero_noise_limit_equals_ideal(self):
        sp = SensingParams(phi0=1e-300, betaPhi=0.0, zeta0=1e-300, betaZeta=0.0)
        rng = np.random.default_rng(0)
        x, s = [60.0, 0, 40.0, 0], [50.0, 50.0]
        assert measure(x, s, sp, rng) == noise_free_measurement(x, s)

    def test_range_sigma_at_100m(self):
        sp = SensingParams()
        _, s_zeta = measurement_sigmas(100.0, sp)
        assert s_zeta == pytest.approx(31.0)

    def test_sample_std_matches_sigma(self):
        sp = SensingParams()
        rng = np.random.default_rng(3)
        x, s = [50.0, 0, 50.0, 0], [150.0, 50.0]  # d = 100
        n = 100_000
        ranges = np.array([measure(x, s, sp, rng).range for _ in range(n)])
        s_phi, s_zeta = measurement_sigmas(100.0, sp)
        # Standard error of a sample standard deviation: sigma / sqrt(2n).
        assert abs(ranges.std(ddof=1) - s_zeta) < 3.0 * s_zeta / math.sqrt(2 * n)


class TestLikelihood:
    def test_peak_at_ideal_measurement(self):
        sp = SensingParams()
        x, s = [70.0, 0, 50.0, 0], [50.0, 50.0]
        z = noise_free_measurement(x, s)
        s_phi, s_zeta = measurement_sigmas(z.range, sp)
        assert likelihood(z, x, s, sp) == pytest.approx(
            1.0 / (2.0 * math.pi * s_phi * s_zeta), rel=1e-12
        )

    def test_wrapped_residual_symmetry(self):
        sp = SensingParams()
        x, s = [70.0, 0, 50.0, 0], [50.0, 50.0]
        z0 = noise_free_measurement(x, s)
        z_plus = Measurement(wrap_angle(z0.bearing + math.pi), z0.range)
        z_minus = Measurement(wrap_angle(z0.bearing - math.pi), z0.range)
        assert likelihood(z_plus, x, s, sp) == pytest.approx(
            likelihood(z_minus, x, s, sp), rel=1e-12
        )

    def test_one_sigma_residuals_hand_value(self):
        sp = SensingParams()
        x, s = [70.0, 0, 50.0, 0], [50.0, 50.0]
        z0 = noise_free_measurement(x, s)
        s_phi, s_zeta = measurement_sigmas(z0.range, sp)
        z = Measurement(z0.bearing + s_phi, z0.range + s_zeta)
        peak = 1.0 / (2.0 * math.pi * s_phi * s_zeta)
        assert likelihood(z, x, s, sp) == pytest.approx(peak * math.exp(-1.0), rel=1e-12)

    def test_integrates_to_one(self):
        sp = SensingParams()
        x, s = [65.0, 0, 40.0, 0], [50.0, 50.0]
        z0 = noise_free_measurement(x, s)
        s_phi, s_zeta = measurement_sigmas(z0.range, sp)
        bearings = z0.bearing + np.linspace(-8 * s_phi, 8 * s_phi, 400)
        ranges = z0.range + np.linspace(-8 * s_zeta, 8 * s_zeta, 400)
        db = bearings[1] - bearings[0]
        dr = ranges[1] - ranges[0]
        total = sum(
            likelihood(Measurement(float(b), float(r)), x, s, sp) * db * dr
            for b in bearings
            for r in ranges
        )
        assert total == pytest.approx(1.0, abs=1e-2)

    def test_vectorized_matches_scalar(self):
        sp = SensingParams()
        rng = np.random.default_rng(11)
        particles = rng.uniform(0, 100, size=(50, 4))
        s = np.array([50.0, 50.0])
        z = Measurement(0.3, 25.0)
        vec = likelihood(z, particles, s, sp)
        scalar = np.array([likelihood(z, p, s, sp) for p in particles])
        assert np.allclose(vec, scalar, rtol=1e-13)


class TestParamValidation:
    def test_bad_ps_rejected(self):
        with pytest.raises(ValueError, match="pS"):
            MotionParams(pS=1.5)

    def test_bad_pdmax_rejected(self):
        with pytest.raises(ValueError, match="pDmax"):
            SensingParams(pDmax=0.0)

    def test_asymmetric_q_rejected(self):
        Q = np.eye(4)
        Q[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            MotionParams(Q=Q)

    def test_wrap_angle_interval(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
        arr = wrap_angle(np.array([0.0, 2 * math.pi, -3 * math.pi]))
        assert np.allclose(arr, [0.0, 0.0, math.pi])

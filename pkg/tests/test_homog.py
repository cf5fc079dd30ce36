"""Homography estimation, projection, warping, and registry selection.

Hand-derived oracles used below.

Marginalized loss: at a fixed noise scale sigma the per-point loss is the
truncated quadratic min(r^2, (k*sigma)^2) with k = sqrt(chi2.ppf(0.99, 4)).
Averaging over sigma uniform on (0, sigma_max], with tau = k*sigma_max and
sigma* = r/k the scale where truncation starts:

    (1/sigma_max) * [ integral_0^{sigma*} k^2 s^2 ds
                      + integral_{sigma*}^{sigma_max} r^2 ds ]
    = r^2 - 2 r^3 / (3 tau)          for r <= tau
    = tau^2 / 3                      for r >  tau

The quadrature tests integrate min(r^2, (k s)^2) numerically and compare.

90-degree warp: H(u, v) = (1 - v, u) rotates about the pixel center of a
2x2 frame. Inverse mapping gives u = y, v = 1 - x, so the warped image
reads out[y][x] = frame[1 - x][y]:

    frame = [[A, B],      out = [[C, A],
             [C, D]]             [D, B]]
"""
from __future__ import annotations

import math
from datetime import datetime, timezone

import numpy as np
import pytest
from scipy import integrate, stats

from orthobrake.correspond import CameraPoint, CorrespondencePair, OrthoPoint
from orthobrake.errors import (
    ConfigError,
    EstimationError,
    EstimationFailure,
    HorizonError,
    ValidationError,
)
from orthobrake.homog import (
    CHI2_99_4DOF_SQRT,
    Homography,
    HomographyRecord,
    RobustParams,
    estimate_dlt,
    estimate_robust,
    msac_loss,
    project,
    project_inverse,
    select_homography,
    sigma_marginalized_loss,
    symmetric_transfer_error,
    warp_image,
)
from orthobrake.synthkit import gen_homography, gen_matrix

TRANSLATION = Homography.from_matrix(
    np.array([[1.0, 0.0, 5.0], [0.0, 1.0, -3.0], [0.0, 0.0, 1.0]])
)

# non-singular, h33 = 0: w vanishes along u = 0
SINGULAR_W = Homography.from_matrix(
    np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
)

# rotation + mild perspective at scale ~1, so transfer residuals carry
# comparable weight in both directions (a strongly shrinking map would
# amplify ortho-side noise through the backward projection)
_TH = 0.12
BALANCED = Homography.from_matrix(
    np.array(
        [
            [0.98 * math.cos(_TH), -0.98 * math.sin(_TH), 240.0],
            [0.98 * math.sin(_TH), 0.98 * math.cos(_TH), 160.0],
            [1.2e-4, -0.8e-4, 1.0],
        ]
    )
)


def _pair(cam_uv, ortho_xy, pid=1) -> CorrespondencePair:
    return CorrespondencePair(
        pair_id=pid, cam=CameraPoint(*cam_uv), ortho=OrthoPoint(*ortho_xy)
    )


def _pairs_under(h: Homography, cam_pts) -> list:
    return [
        _pair((u, v), (lambda o: (o.x, o.y))(project(h, CameraPoint(u, v))), i + 1)
        for i, (u, v) in enumerate(cam_pts)
    ]


def _camera_grid(nx=5, ny=4) -> list:
    us = np.linspace(100.0, 1820.0, nx)
    vs = np.linspace(100.0, 980.0, ny)
    return [(float(u), float(v)) for v in vs for u in us]


# -- canonical form ---------------------------------------------------------------


class TestCanonicalForm:
    def test_frobenius_norm_is_one(self):
        for seed in (1, 2, 3, 17):
            h = Homography.from_matrix(gen_matrix(seed))
            assert math.isclose(np.linalg.norm(h.h), 1.0, rel_tol=1e-12)

    def test_identity_canonicalizes_to_scaled_eye(self):
        h = Homography.identity()
        assert np.allclose(h.h, np.eye(3) / math.sqrt(3.0), atol=1e-15)
        assert h.h[2, 2] > 0

    def test_scalar_multiples_are_bit_identical(self):
        for seed in range(1, 30):
            m = gen_matrix(seed)
            base = Homography.from_matrix(m)
            for lam in (-2.0, 0.5, 10.0):
                assert np.array_equal(base.h, Homography.from_matrix(lam * m).h), (
                    f"seed {seed}, lambda {lam}"
                )

    def test_sign_rule_forces_h33_nonnegative(self):
        m = gen_matrix(5)
        assert Homography.from_matrix(-m).h[2, 2] >= 0

    def test_sign_rule_fallback_when_h33_is_zero(self):
        m = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        a = Homography.from_matrix(m)
        b = Homography.from_matrix(-m)
        assert np.array_equal(a.h, b.h)
        # first nonzero element (row-major) is nonnegative
        flat = a.h.ravel()
        assert flat[np.nonzero(flat)[0][0]] > 0

    def test_rank_deficient_rejected(self):
        m = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        with pytest.raises(ValidationError):
            Homography.from_matrix(m)

    def test_serialization_round_trip(self):
        h = Homography.from_matrix(gen_matrix(7))
        back = Homography.from_matrix(np.array(h.to_list()).reshape(3, 3))
        # re-canonicalization may drift by an ulp; behavior must not change
        assert np.allclose(h.h, back.h, atol=1e-15)
        p = CameraPoint(431.0, 220.0)
        q1, q2 = project(h, p), project(back, p)
        assert math.isclose(q1.x, q2.x, abs_tol=1e-9)
        assert math.isclose(q1.y, q2.y, abs_tol=1e-9)


# -- projection -------------------------------------------------------------------


class TestProject:
    def test_identity(self):
        q = project(Homography.identity(), CameraPoint(10.0, 20.0))
        assert (q.x, q.y) == (10.0, 20.0)

    def test_pure_translation(self):
        q = project(TRANSLATION, CameraPoint(0.0, 0.0))
        assert math.isclose(q.x, 5.0, abs_tol=1e-12)
        assert math.isclose(q.y, -3.0, abs_tol=1e-12)

    def test_w_zero_is_horizon_error(self):
        with pytest.raises(HorizonError):
            project(SINGULAR_W, CameraPoint(0.0, 5.0))

    def test_scale_invariance_of_projection(self):
        m = gen_matrix(9)
        p = CameraPoint(640.0, 360.0)
        base = project(Homography.from_matrix(m), p)
        for lam in (-2.0, 0.5, 10.0):
            q = project(Homography.from_matrix(lam * m), p)
            assert (q.x, q.y) == (base.x, base.y)

    def test_inverse_identity(self):
        q = project_inverse(Homography.identity(), OrthoPoint(3.0, 4.0))
        assert (q.u, q.v) == (3.0, 4.0)

    def test_inverse_round_trip_within_1e9(self):
        h = Homography.from_matrix(gen_matrix(11))
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = CameraPoint(rng.uniform(0, 1920), rng.uniform(0, 1080))
            q = project(h, p)
            back = project_inverse(h, q)
            assert math.isclose(back.u, p.u, abs_tol=1e-9)
            assert math.isclose(back.v, p.v, abs_tol=1e-9)

    def test_inverse_horizon_error(self):
        # inverse of SINGULAR_W swaps x and w, so w = x; x = 0 is the horizon
        with pytest.raises(HorizonError):
            project_inverse(SINGULAR_W, OrthoPoint(0.0, 5.0))


class TestSymmetricTransfer:
    def test_exact_pair_is_zero(self):
        h = Homography.from_matrix(gen_matrix(4))
        p = CameraPoint(500.0, 300.0)
        q = project(h, p)
        assert symmetric_transfer_error(h, _pair((p.u, p.v), (q.x, q.y))) <= 1e-12

    def test_one_pixel_displacement_under_identity(self):
        err = symmetric_transfer_error(
            Homography.identity(), _pair((10.0, 20.0), (11.0, 20.0))
        )
        assert math.isclose(err, 2.0, abs_tol=1e-12)

    def test_horizon_pair_is_infinite(self):
        err = symmetric_transfer_error(SINGULAR_W, _pair((0.0, 5.0), (7.0, 7.0)))
        assert math.isinf(err)


# -- direct linear transform ------------------------------------------------------


class TestDLT:
    def test_identity_fixed_point(self):
        pairs = _pairs_under(
            Homography.identity(), [(0, 0), (100, 0), (100, 80), (0, 80)]
        )
        h = estimate_dlt(pairs)
        assert np.abs(h.h - np.eye(3) / math.sqrt(3.0)).max() < 1e-9

    def test_recovers_translation(self):
        cam = [(0, 0), (100, 0), (100, 80), (0, 80), (50, 40), (20, 60)]
        pairs = _pairs_under(TRANSLATION, cam)
        h = estimate_dlt(pairs)
        assert np.abs(h.h - TRANSLATION.h).max() < 1e-9

    def test_recovers_perspective_map(self):
        truth = Homography.from_matrix(gen_matrix(21))
        pairs = _pairs_under(truth, _camera_grid())
        h = estimate_dlt(pairs)
        assert np.abs(h.h - truth.h).max() < 1e-9

    def test_three_collinear_camera_points_rejected(self):
        pairs = [
            _pair((0, 0), (0, 0), 1),
            _pair((1, 0), (1, 0), 2),
            _pair((2, 0), (2, 0), 3),
            _pair((0, 1), (0, 1), 4),
        ]
        with pytest.raises(EstimationError):
            estimate_dlt(pairs)

    def test_fewer_than_four_pairs_rejected(self):
        pairs = _pairs_under(Homography.identity(), [(0, 0), (1, 0), (0, 1)])
        with pytest.raises(ValidationError):
            estimate_dlt(pairs)


# -- robust loss functions --------------------------------------------------------


class TestLosses:
    def test_truncation_radius_matches_chi2_table(self):
        assert math.isclose(
            CHI2_99_4DOF_SQRT, math.sqrt(stats.chi2.ppf(0.99, df=4)), rel_tol=1e-12
        )

    @pytest.mark.parametrize("r", [0.0, 0.5, 1.0, 3.0, 10.0, 36.0, 36.6, 50.0])
    def test_closed_form_matches_quadrature(self, r):
        sigma_max = 10.0
        k = CHI2_99_4DOF_SQRT
        kink = r / k
        points = [kink] if 0.0 < kink < sigma_max else None
        val, _ = integrate.quad(
            lambda s: min(r * r, (k * s) ** 2), 0.0, sigma_max, points=points
        )
        expected = val / sigma_max
        got = float(sigma_marginalized_loss(np.array([r]), sigma_max)[0])
        assert math.isclose(got, expected, rel_tol=1e-9, abs_tol=1e-12)

    def test_saturates_at_tau_squared_over_three(self):
        tau = CHI2_99_4DOF_SQRT * 10.0
        big = sigma_marginalized_loss(np.array([tau + 1, 1e6, np.inf]), 10.0)
        assert np.allclose(big, tau * tau / 3.0)

    def test_monotone_nondecreasing(self):
        r = np.linspace(0.0, 60.0, 2000)
        loss = sigma_marginalized_loss(r, 10.0)
        assert np.all(np.diff(loss) >= -1e-12)

    def test_msac_truncated_square(self):
        got = msac_loss(np.array([0.0, 1.0, 3.0, 4.0, np.inf]), 3.0)
        assert np.allclose(got, [0.0, 1.0, 9.0, 9.0, 9.0])


# -- robust estimation ------------------------------------------------------------


class TestEstimateRobust:
    def test_clean_pairs_recover_h_with_all_inliers(self):
        truth = Homography.from_matrix(gen_matrix(31))
        pairs = _pairs_under(truth, _camera_grid())
        result = estimate_robust(pairs, RobustParams(seed=0))
        assert result.inlier_mask.all()
        assert np.abs(result.homography.h - truth.h).max() < 1e-9
        assert result.mean_inlier_error < 1e-6

    def test_contaminated_set_keeps_true_inliers(self):
        truth = BALANCED
        clean = _pairs_under(truth, _camera_grid())
        rng = np.random.default_rng(42)
        noisy = [
            _pair(
                (p.cam.u, p.cam.v),
                (p.ortho.x + rng.normal(0, 0.5), p.ortho.y + rng.normal(0, 0.5)),
                p.pair_id,
            )
            for p in clean
        ]
        outliers = [
            _pair(
                (rng.uniform(0, 1920), rng.uniform(0, 1080)),
                (
                    rng.uniform(-500, 500) + 900.0,
                    rng.uniform(-500, 500) + 500.0,
                ),
                100 + i,
            )
            for i in range(8)
        ]
        result = estimate_robust(noisy + outliers, RobustParams(seed=1))
        true_inliers = result.inlier_mask[:20]
        assert true_inliers.sum() >= 18
        assert result.mean_inlier_error < 1.0

    def test_minimal_sample_equals_dlt(self):
        truth = Homography.from_matrix(gen_matrix(13))
        pairs = _pairs_under(truth, [(100, 100), (1800, 120), (1700, 950), (150, 900)])
        result = estimate_robust(pairs, RobustParams(seed=3))
        direct = estimate_dlt(pairs)
        assert result.inlier_mask.all()
        assert np.abs(result.homography.h - direct.h).max() < 1e-9

    def test_deterministic_for_fixed_seed(self):
        truth = Homography.from_matrix(gen_matrix(8))
        clean = _pairs_under(truth, _camera_grid())
        rng = np.random.default_rng(5)
        pairs = clean + [
            _pair((rng.uniform(0, 1920), rng.uniform(0, 1080)),
                  (rng.uniform(0, 2000), rng.uniform(0, 2000)), 50 + i)
            for i in range(6)
        ]
        a = estimate_robust(pairs, RobustParams(seed=7))
        b = estimate_robust(pairs, RobustParams(seed=7))
        assert np.array_equal(a.homography.h, b.homography.h)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert a.score == b.score
        assert a.iterations_run == b.iterations_run
        assert a.mean_inlier_error == b.mean_inlier_error

    def test_msac_scoring_agrees_on_clean_data(self):
        truth = Homography.from_matrix(gen_matrix(19))
        pairs = _pairs_under(truth, _camera_grid())
        result = estimate_robust(pairs, RobustParams(seed=0, scoring="msac"))
        assert result.inlier_mask.all()
        assert np.abs(result.homography.h - truth.h).max() < 1e-9

    def test_outliers_cannot_move_a_clean_fit(self):
        # adding < 50% gross outliers must leave the recovered map at the
        # noise floor of the clean pairs (zero here), across many draws
        for trial in range(100):
            truth = Homography.from_matrix(gen_matrix(trial + 1))
            clean = _pairs_under(truth, _camera_grid(4, 3))
            rng = np.random.default_rng(trial)
            pairs = clean + [
                _pair(
                    (rng.uniform(0, 1920), rng.uniform(0, 1080)),
                    (rng.uniform(-800, 800) + 900, rng.uniform(-800, 800) + 500),
                    90 + j,
                )
                for j in range(5)
            ]
            result = estimate_robust(pairs, RobustParams(seed=trial))
            errs = [
                symmetric_transfer_error(result.homography, p) for p in clean
            ]
            assert max(errs) < 1e-6, f"trial {trial}"

    def test_all_degenerate_samples_is_estimation_failure(self):
        # 4 of 5 camera points collinear: every minimal sample has a
        # collinear triple, so no hypothesis can be formed
        pairs = [
            _pair((0, 0), (10, 3), 1),
            _pair((1, 0), (20, 9), 2),
            _pair((2, 0), (31, 27), 3),
            _pair((3, 0), (44, 81), 4),
            _pair((0, 1), (59, 243), 5),
        ]
        with pytest.raises(EstimationFailure):
            estimate_robust(pairs, RobustParams(seed=0, max_iterations=200))

    def test_fewer_than_four_pairs_rejected(self):
        pairs = _pairs_under(Homography.identity(), [(0, 0), (1, 0), (0, 1)])
        with pytest.raises(ValidationError):
            estimate_robust(pairs)


# -- warping ---------------------------------------------------------------------


class TestWarpImage:
    def test_identity_copies_pixels(self):
        rng = np.random.default_rng(2)
        frame = rng.integers(0, 256, size=(6, 9, 3), dtype=np.uint8)
        out = warp_image(Homography.identity(), frame, (9, 6))
        assert np.array_equal(out[..., :3], frame)
        assert (out[..., 3] == 255).all()

    def test_quarter_turn_2x2(self):
        a, b, c, d = (10, 20, 30), (40, 50, 60), (70, 80, 90), (200, 210, 220)
        frame = np.array([[a, b], [c, d]], dtype=np.uint8)
        rot = Homography.from_matrix(
            np.array([[0.0, -1.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        )
        out = warp_image(rot, frame, (2, 2))
        assert tuple(out[0, 0, :3]) == c
        assert tuple(out[0, 1, :3]) == a
        assert tuple(out[1, 0, :3]) == d
        assert tuple(out[1, 1, :3]) == b
        assert (out[..., 3] == 255).all()

    def test_fully_out_of_frame_is_transparent(self):
        frame = np.full((2, 2, 3), 255, dtype=np.uint8)
        shift = Homography.from_matrix(
            np.array([[1.0, 0.0, 1000.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        )
        out = warp_image(shift, frame, (4, 4))
        assert (out[..., 3] == 0).all()
        assert (out[..., :3] == 0).all()

    def test_bilinear_midpoint(self):
        # half-pixel shift samples exactly between two neighbors
        frame = np.zeros((1, 2, 3), dtype=np.uint8)
        frame[0, 0] = 100
        frame[0, 1] = 200
        half = Homography.from_matrix(
            np.array([[1.0, 0.0, -0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        )
        out = warp_image(half, frame, (1, 1))
        assert tuple(out[0, 0, :3]) == (150, 150, 150)


# -- registry selection -----------------------------------------------------------


def _epoch(hh: int, mm: int = 0) -> float:
    return datetime(2025, 6, 2, hh, mm, tzinfo=timezone.utc).timestamp()


H_DEFAULT = Homography.identity()
H_MORNING = TRANSLATION
H_NIGHT = Homography.from_matrix(gen_matrix(2))


class TestSelectHomography:
    def test_lone_default_always_matches(self):
        reg = [HomographyRecord(homography=H_DEFAULT)]
        assert select_homography(reg, _epoch(3), "x.mp4") == H_DEFAULT

    def test_window_containment(self):
        reg = [
            HomographyRecord(homography=H_MORNING, valid_from="07:00", valid_to="12:00"),
            HomographyRecord(homography=H_DEFAULT),
        ]
        assert select_homography(reg, _epoch(9), "x.mp4") == H_MORNING
        assert select_homography(reg, _epoch(13), "x.mp4") == H_DEFAULT

    def test_window_end_is_exclusive(self):
        reg = [
            HomographyRecord(homography=H_MORNING, valid_from="07:00", valid_to="12:00"),
            HomographyRecord(homography=H_DEFAULT),
        ]
        assert select_homography(reg, _epoch(12, 0), "x.mp4") == H_DEFAULT
        assert select_homography(reg, _epoch(11, 59), "x.mp4") == H_MORNING

    def test_window_wrapping_midnight(self):
        reg = [
            HomographyRecord(homography=H_NIGHT, valid_from="22:00", valid_to="05:00"),
            HomographyRecord(homography=H_DEFAULT),
        ]
        assert select_homography(reg, _epoch(23), "x.mp4") == H_NIGHT
        assert select_homography(reg, _epoch(2), "x.mp4") == H_NIGHT
        assert select_homography(reg, _epoch(12), "x.mp4") == H_DEFAULT

    def test_filename_pattern(self):
        reg = [
            HomographyRecord(homography=H_MORNING, filename_pattern="cam2_*.mp4"),
            HomographyRecord(homography=H_DEFAULT),
        ]
        assert select_homography(reg, _epoch(9), "cam2_0601.mp4") == H_MORNING
        assert select_homography(reg, _epoch(9), "cam7_0601.mp4") == H_DEFAULT

    def test_specificity_ranking(self):
        reg = [
            HomographyRecord(homography=H_DEFAULT),
            HomographyRecord(homography=H_NIGHT, filename_pattern="cam2_*"),
            HomographyRecord(
                homography=H_MORNING,
                valid_from="07:00", valid_to="12:00",
                filename_pattern="cam2_*",
            ),
        ]
        # window+pattern beats pattern-only beats default
        assert select_homography(reg, _epoch(9), "cam2_a.mp4") == H_MORNING
        assert select_homography(reg, _epoch(14), "cam2_a.mp4") == H_NIGHT
        assert select_homography(reg, _epoch(14), "cam9_a.mp4") == H_DEFAULT

    def test_tie_keeps_registry_order(self):
        reg = [
            HomographyRecord(homography=H_MORNING, valid_from="00:00", valid_to="23:59"),
            HomographyRecord(homography=H_NIGHT, valid_from="08:00", valid_to="10:00"),
        ]
        assert select_homography(reg, _epoch(9), "x.mp4") == H_MORNING

    def test_utc_offset_shifts_the_local_clock(self):
        reg = [
            HomographyRecord(homography=H_MORNING, valid_from="07:00", valid_to="12:00"),
            HomographyRecord(homography=H_DEFAULT),
        ]
        # 14:00 UTC is 09:00 local at offset -5
        got = select_homography(reg, _epoch(14), "x.mp4", utc_offset_hours=-5.0)
        assert got == H_MORNING

    def test_empty_registry_is_config_error(self):
        with pytest.raises(ConfigError):
            select_homography([], _epoch(9), "x.mp4")

    def test_no_match_without_default_is_config_error(self):
        reg = [
            HomographyRecord(homography=H_MORNING, valid_from="07:00", valid_to="12:00")
        ]
        with pytest.raises(ConfigError):
            select_homography(reg, _epoch(20), "x.mp4")


class TestHomographyRecord:
    def test_window_must_be_paired(self):
        with pytest.raises(ValidationError):
            HomographyRecord(homography=H_DEFAULT, valid_from="07:00")

    def test_bad_time_of_day_rejected(self):
        with pytest.raises(ValidationError):
            HomographyRecord(
                homography=H_DEFAULT, valid_from="25:00", valid_to="26:00"
            )
        with pytest.raises(ValidationError):
            HomographyRecord(
                homography=H_DEFAULT, valid_from="7am", valid_to="noon"
            )

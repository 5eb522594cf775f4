"""Tests for the gaze pipeline: calibration fitting and mapping, visual-angle
conversion, I-DT fixation segmentation, accuracy/precision metrics, and
gaze-object association.

Angle literals come from hand trig on the flat-screen geometry: a point d mm
off center subtends atan(d / D) at viewing distance D for an eye on the
center normal.
"""

import numpy as np
import pytest

from biostream import gaze

GEOM = gaze.ScreenGeometry(width_px=1920, height_px=1080,
                           pixel_pitch_mm=0.25, viewing_distance_mm=700.0)
CENTER = (960.0, 540.0)


def grid_targets():
    xs = np.linspace(192, 1728, 3)
    ys = np.linspace(108, 972, 3)
    return np.array([(x, y) for y in ys for x in xs])


def quad_map(points, cx, cy):
    P = np.atleast_2d(points)
    px, py = P[:, 0], P[:, 1]
    M = np.column_stack([np.ones_like(px), px, py, px * py, px ** 2, py ** 2])
    return np.column_stack([M @ cx, M @ cy])


class TestTypes:
    def test_pupil_confidence_validated(self):
        gaze.PupilSample(0.0, 0.5, 0.5, confidence=1.0)
        with pytest.raises(ValueError):
            gaze.PupilSample(0.0, 0.5, 0.5, confidence=1.5)
        with pytest.raises(ValueError):
            gaze.PupilSample(0.0, 0.5, 0.5, confidence=-0.1)

    def test_screen_geometry_validated(self):
        with pytest.raises(ValueError):
            gaze.ScreenGeometry(0, 1080, 0.25, 700.0)
        with pytest.raises(ValueError):
            gaze.ScreenGeometry(1920, 1080, -0.25, 700.0)
        with pytest.raises(ValueError):
            gaze.ScreenGeometry(1920, 1080, 0.25, 0.0)


class TestFitCalibration:
    def test_affine_truth_fits_exactly(self):
        # an affine pupil-to-screen relation lies inside the quadratic basis
        T = grid_targets()
        P = np.column_stack([
            3e-4 * T[:, 0] + 5e-5 * T[:, 1] + 0.05,
            -4e-5 * T[:, 0] + 4.5e-4 * T[:, 1] + 0.10,
        ])
        model = gaze.fit_calibration(P, T)
        assert model.residual_rms_px < 1e-9
        np.testing.assert_allclose(gaze.map_points(model, P), T, atol=1e-6)

    def test_identity_map_reproduces_targets(self):
        T = grid_targets()
        P = T / np.array([1920.0, 1080.0])
        model = gaze.fit_calibration(P, T)
        np.testing.assert_allclose(gaze.map_points(model, P), T, atol=1e-9)

    def test_quadratic_truth_generalizes_to_unseen_points(self):
        cx = np.array([120.0, 1500.0, 60.0, 80.0, 140.0, -30.0])
        cy = np.array([80.0, 40.0, 900.0, -50.0, 25.0, 60.0])
        P_fit = np.array([(u, v) for v in (0.1, 0.5, 0.9) for u in (0.1, 0.5, 0.9)])
        model = gaze.fit_calibration(P_fit, quad_map(P_fit, cx, cy))
        assert model.residual_rms_px < 1e-9
        P_new = np.array([[0.37, 0.63], [0.82, 0.21], [0.05, 0.95]])
        np.testing.assert_allclose(gaze.map_points(model, P_new),
                                   quad_map(P_new, cx, cy), atol=1e-6)

    def test_collinear_targets_rejected(self):
        P = np.array([(u, v) for v in (0.1, 0.5, 0.9) for u in (0.1, 0.5, 0.9)])
        x = np.linspace(100, 1800, 9)
        T = np.column_stack([x, 0.3 * x + 50.0])
        with pytest.raises(ValueError, match="collinear"):
            gaze.fit_calibration(P, T)

    def test_degenerate_pupil_cloud_rejected(self):
        rng = np.random.default_rng(0)
        P = 0.5 + 1e-10 * rng.normal(size=(9, 2))
        with pytest.raises(ValueError, match="ill-conditioned"):
            gaze.fit_calibration(P, grid_targets())

    def test_too_few_pairs_rejected(self):
        T = grid_targets()[:5]
        with pytest.raises(ValueError, match="6"):
            gaze.fit_calibration(T / 1920.0, T)

    def test_count_mismatch_rejected(self):
        T = grid_targets()
        with pytest.raises(ValueError):
            gaze.fit_calibration(T[:8] / 1920.0, T)


class TestMapGaze:
    def make_identity_model(self):
        T = grid_targets()
        return gaze.fit_calibration(T / np.array([1920.0, 1080.0]), T)

    def test_confidence_gate_at_0_6(self):
        model = self.make_identity_model()
        lo = gaze.PupilSample(0.0, 0.5, 0.5, confidence=0.59)
        hi = gaze.PupilSample(0.0, 0.5, 0.5, confidence=0.61)
        assert gaze.map_gaze(model, lo) is None
        out = gaze.map_gaze(model, hi)
        assert out == pytest.approx((960.0, 540.0), abs=1e-6)

    def test_gate_threshold_is_configurable(self):
        model = self.make_identity_model()
        s = gaze.PupilSample(0.0, 0.5, 0.5, confidence=0.3)
        assert gaze.map_gaze(model, s) is None
        assert gaze.map_gaze(model, s, min_confidence=0.2) is not None

    def test_no_clamping_offscreen(self):
        model = self.make_identity_model()
        out = gaze.map_gaze(model, gaze.PupilSample(0.0, 1.4, 0.5))
        assert out[0] > 1920.0


class TestAngularOffset:
    def test_zero_for_identical_points(self):
        assert gaze.angular_offset((123.0, 456.0), (123.0, 456.0), GEOM) == (
            pytest.approx(0.0, abs=1e-5))

    def test_hand_trig_100px_from_center(self):
        # 100 px * 0.25 mm/px = 25 mm at 700 mm: atan(25/700) = 2.0454 deg
        got = gaze.angular_offset(CENTER, (1060.0, 540.0), GEOM)
        assert got == pytest.approx(np.degrees(np.arctan(25.0 / 700.0)), abs=1e-9)
        assert got == pytest.approx(2.0454, abs=1e-3)

    def test_vertical_case(self):
        got = gaze.angular_offset(CENTER, (960.0, 740.0), GEOM)
        assert got == pytest.approx(np.degrees(np.arctan(50.0 / 700.0)), abs=1e-9)

    def test_symmetry_exact(self):
        p, q = (100.0, 900.0), (1800.0, 200.0)
        assert gaze.angular_offset(p, q, GEOM) == gaze.angular_offset(q, p, GEOM)

    def test_triangle_inequality_sampled(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform([0, 0], [1920, 1080], size=(60, 2))
        for a, b, c in pts.reshape(20, 3, 2):
            ab = gaze.angular_offset(a, b, GEOM)
            bc = gaze.angular_offset(b, c, GEOM)
            ac = gaze.angular_offset(a, c, GEOM)
            assert ac <= ab + bc + 1e-9


def px_at_angle(deg: float) -> float:
    """Horizontal pixel offset from center subtending deg at the eye."""
    return 960.0 + np.tan(np.radians(deg)) * 700.0 / 0.25


class TestSegmentFixations:
    def test_constant_gaze_one_fixation(self):
        t = np.arange(16) / 30.0  # 0.5 s at 30 Hz
        P = np.tile([800.0, 450.0], (16, 1))
        out = gaze.segment_fixations(t, P, GEOM)
        assert len(out) == 1
        fx = out[0]
        assert fx.centroid == pytest.approx((800.0, 450.0))
        assert fx.indices == (0, 15)
        assert fx.duration_s == pytest.approx(0.5)

    def test_two_clusters_five_degrees_apart(self):
        t = np.arange(20) / 30.0
        a = (px_at_angle(-2.5), 540.0)
        b = (px_at_angle(2.5), 540.0)
        P = np.vstack([np.tile(a, (10, 1)), np.tile(b, (10, 1))])
        out = gaze.segment_fixations(t, P, GEOM)
        assert len(out) == 2
        assert out[0].centroid == pytest.approx(a)
        assert out[1].centroid == pytest.approx(b)

    def test_smooth_drift_yields_no_fixation(self):
        # 12 deg/s: any window lasting 0.1 s spreads 1.2 deg > the threshold
        t = np.arange(30) / 30.0
        x = 700.0 + 12.0 * 48.87 * t  # ~48.87 px per degree near center
        P = np.column_stack([x, np.full_like(x, 540.0)])
        assert gaze.segment_fixations(t, P, GEOM) == []

    def test_intervals_disjoint_and_ordered(self):
        rng = np.random.default_rng(7)
        segs = []
        for _ in range(6):
            center = [rng.uniform(300, 1600), rng.uniform(200, 900)]
            m = int(rng.integers(4, 12))
            segs.append(center + rng.normal(0.0, 2.0, (m, 2)))
        P = np.vstack(segs)
        t = np.arange(len(P)) / 30.0
        out = gaze.segment_fixations(t, P, GEOM)
        for f0, f1 in zip(out, out[1:]):
            assert f0.indices[1] < f1.indices[0]
            assert f0.end_s <= f1.start_s
        for fx in out:
            assert fx.duration_s >= 0.1

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            gaze.segment_fixations([0.0, 0.1], [[0.0, 0.0]], GEOM)

    def test_fewer_than_two_samples_empty(self):
        assert gaze.segment_fixations([0.0], [[10.0, 10.0]], GEOM) == []


class TestAccuracy:
    def test_zero_when_centroids_equal_targets(self):
        T = grid_targets()
        assert gaze.gaze_accuracy(T, T, GEOM) == pytest.approx(0.0, abs=1e-5)

    def test_constant_offset_at_center(self):
        cents = np.tile([1060.0, 540.0], (5, 1))
        targs = np.tile([960.0, 540.0], (5, 1))
        got = gaze.gaze_accuracy(cents, targs, GEOM)
        assert got == pytest.approx(2.0454, abs=1e-3)

    def test_translation_covariance_near_center(self):
        rng = np.random.default_rng(1)
        cents = CENTER + rng.uniform(-80, 80, (6, 2))
        targs = cents + rng.uniform(-30, 30, (6, 2))
        shift = np.array([40.0, -25.0])
        a0 = gaze.gaze_accuracy(cents, targs, GEOM)
        a1 = gaze.gaze_accuracy(cents + shift, targs + shift, GEOM)
        assert abs(a1 - a0) < 1e-3

    def test_empty_or_mismatched_rejected(self):
        with pytest.raises(ValueError):
            gaze.gaze_accuracy([], [], GEOM)
        with pytest.raises(ValueError):
            gaze.gaze_accuracy([[0.0, 0.0]], [[0.0, 0.0], [1.0, 1.0]], GEOM)


class TestPrecision:
    def test_constant_run_is_zero(self):
        run = np.tile([900.0, 500.0], (5, 1))
        assert gaze.gaze_precision([run], GEOM) == pytest.approx(0.0, abs=1e-5)

    def test_alternating_one_degree_is_one(self):
        p = (960.0, 540.0)
        q = (px_at_angle(1.0), 540.0)
        run = np.array([p, q, p, q, p])
        assert gaze.gaze_precision([run], GEOM) == pytest.approx(1.0, abs=1e-6)

    def test_pooling_weights_by_pair_count(self):
        p = (960.0, 540.0)
        q = (px_at_angle(1.0), 540.0)
        still = np.tile(p, (3, 1))          # two 0 deg pairs
        moving = np.array([p, q, p])        # two 1 deg pairs
        got = gaze.gaze_precision([still, moving], GEOM)
        assert got == pytest.approx(np.sqrt(0.5), abs=1e-6)

    def test_monotone_in_jitter_sigma(self):
        rng = np.random.default_rng(5)
        got = []
        for sigma_deg in (0.1, 0.2, 0.4):
            px = sigma_deg * 48.87
            run = CENTER + rng.normal(0.0, px, (500, 2))
            got.append(gaze.gaze_precision([run], GEOM))
        assert got[0] < got[1] < got[2]

    def test_no_pairs_rejected(self):
        with pytest.raises(ValueError):
            gaze.gaze_precision([np.array([[1.0, 2.0]])], GEOM)


class TestMatching:
    def test_nearest_within_3_degrees_else_dropped(self):
        targets = np.array([[960.0, 540.0], [960.0, 740.0]])
        near = gaze.Fixation(0.0, 0.2, (980.0, 545.0), (0, 5))
        far = gaze.Fixation(0.3, 0.5, (px_at_angle(8.0), 540.0), (6, 11))
        cents, matched = gaze.match_fixations_to_targets([near, far], targets, GEOM)
        assert len(cents) == 1
        np.testing.assert_allclose(matched[0], targets[0])


class TestObjectAssociation:
    def test_marker_round_trip(self):
        box = gaze.parse_object_marker("cup, 0.88, 0.10, 0.20, 0.40, 0.50")
        assert box.label == "cup"
        assert box.confidence == pytest.approx(0.88)
        assert box.area() == pytest.approx(0.09)

    def test_marker_field_count_enforced(self):
        with pytest.raises(ValueError, match="6"):
            gaze.parse_object_marker("cup,0.9,0.1,0.2,0.4")
        with pytest.raises(ValueError):
            gaze.parse_object_marker("cup,high,0.1,0.2,0.4,0.5")

    def test_single_box_hit_and_miss(self):
        box = gaze.LabeledBox("desk", 0.1, 0.1, 0.9, 0.9)
        assert gaze.associate_gaze_object((0.5, 0.5), [box]) == "desk"
        assert gaze.associate_gaze_object((0.95, 0.5), [box]) is None

    def test_nested_boxes_inner_wins(self):
        outer = gaze.LabeledBox("desk", 0.0, 0.0, 1.0, 1.0)
        inner = gaze.LabeledBox("mug", 0.4, 0.4, 0.6, 0.6)
        assert gaze.associate_gaze_object((0.5, 0.5), [outer, inner]) == "mug"
        assert gaze.associate_gaze_object((0.5, 0.5), [inner, outer]) == "mug"

    def test_reversed_corners_still_contain(self):
        box = gaze.LabeledBox("flip", 0.9, 0.9, 0.1, 0.1)
        assert box.contains(0.5, 0.5)
        assert box.area() == pytest.approx(0.64)

    def test_boundary_point_contained(self):
        box = gaze.LabeledBox("edge", 0.1, 0.1, 0.9, 0.9)
        assert gaze.associate_gaze_object((0.1, 0.5), [box]) == "edge"

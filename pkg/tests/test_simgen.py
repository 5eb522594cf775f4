"""Tests for the signal generators: ECG beat trains, motion-corrupted PPG,
EEG mixtures, the invertible gaze truth map, scanpath synthesis, calibration
target layouts, and the jittery link simulator.

Every generator must be a pure function of (config, duration): the
determinism tests assert bit-identical reruns.
"""

import numpy as np
import pytest

from biostream import dsp
from biostream.gaze import ScreenGeometry, angular_offset, gaze_precision
from biostream.simgen import (
    SimConfig, TruthMap, calibration_grid, make_clock_exchanges,
    make_truth_map, scatter_targets, simulate_link, synth_ecg,
    synth_eeg_mixture, synth_gaze, synth_ppg_with_motion,
)
from biostream.sync import estimate_clock_offset

GEOM = ScreenGeometry(1920, 1080, 0.25, 700.0)


class TestSynthEcg:
    def test_constant_60bpm_no_jitter(self):
        cfg = SimConfig(seed=0, hr_bpm=60.0, rr_jitter_ms=0.0)
        x, beats = synth_ecg(cfg, 10.0)
        assert len(x) == 10_000
        assert len(beats) == 10
        np.testing.assert_allclose(np.diff(beats), 1.0, atol=1e-12)
        assert beats[0] == pytest.approx(0.5)  # half an interval in

    def test_72bpm_15s_has_18_beats(self):
        x, beats = synth_ecg(SimConfig(seed=0), 15.0)
        assert len(beats) == 18

    def test_deterministic(self):
        a, beats_a = synth_ecg(SimConfig(seed=5), 8.0)
        b, beats_b = synth_ecg(SimConfig(seed=5), 8.0)
        assert np.array_equal(a, b)
        assert np.array_equal(beats_a, beats_b)
        c, _ = synth_ecg(SimConfig(seed=6), 8.0)
        assert not np.array_equal(a, c)

    def test_hr_ramp_spans_range(self):
        cfg = SimConfig(seed=1, hr_bpm=(60.0, 120.0), rr_jitter_ms=0.0)
        _, beats = synth_ecg(cfg, 60.0)
        rr = np.diff(beats)
        assert rr[0] == pytest.approx(1.0, abs=0.02)
        assert rr[-1] == pytest.approx(0.5, abs=0.02)

    def test_qrs_peaks_sit_on_beats(self):
        cfg = SimConfig(seed=2, ecg_noise=0.0, rr_jitter_ms=0.0)
        x, beats = synth_ecg(cfg, 10.0)
        for b in beats:
            k = int(round(b * cfg.ecg_rate_hz))
            w = x[max(0, k - 30):k + 30]
            assert np.max(w) == pytest.approx(1.0, abs=0.01)

    def test_quantization_switch(self):
        raw, _ = synth_ecg(SimConfig(seed=3), 5.0)
        q, _ = synth_ecg(SimConfig(seed=3, quantize_12bit=True), 5.0)
        assert not np.array_equal(raw, q)
        assert len(np.unique(q)) <= 4096
        assert np.max(np.abs(raw - q)) < (raw.max() - raw.min()) / 4095


class TestSynthPpg:
    def test_rest_is_clean_plus_sensor_noise(self):
        cfg = SimConfig(seed=0)
        ppg, acc, clean, _ = synth_ppg_with_motion(cfg, 60.0, "rest")
        resid = ppg - clean
        assert np.std(resid) == pytest.approx(cfg.ppg_noise, rel=0.1)
        assert np.max(np.abs(resid)) < 6 * cfg.ppg_noise

    def test_rest_accel_is_noise_floor(self):
        cfg = SimConfig(seed=0)
        _, acc, _, _ = synth_ppg_with_motion(cfg, 30.0, "rest")
        assert acc.shape == (3000, 3)
        np.testing.assert_allclose(np.std(acc, axis=0), cfg.accel_noise, rtol=0.3)

    def test_walk_input_snr_is_0db(self):
        cfg = SimConfig(seed=1, artifact_snr_db=0.0)
        ppg, _, clean, _ = synth_ppg_with_motion(cfg, 120.0, "walk")
        snr_db = 10 * np.log10(np.var(clean) / np.var(ppg - clean))
        assert snr_db == pytest.approx(0.0, abs=1.0)

    def test_walk_artifact_is_causal_linear_in_accel(self):
        # regressing the corruption on 8 accel lags per channel must leave
        # only the sensor noise
        cfg = SimConfig(seed=2)
        ppg, acc, clean, _ = synth_ppg_with_motion(cfg, 60.0, "walk")
        y = ppg - clean
        n, taps = len(y), cfg.fir_taps
        cols = []
        for ch in range(3):
            for lag in range(taps):
                col = np.zeros(n)
                col[lag:] = acc[:n - lag, ch]
                cols.append(col)
        X = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        assert np.std(resid) == pytest.approx(cfg.ppg_noise, rel=0.15)

    def test_walk_accel_carries_cadence(self):
        cfg = SimConfig(seed=3)
        _, acc, _, _ = synth_ppg_with_motion(cfg, 30.0, "walk")
        freqs = np.fft.rfftfreq(len(acc), 1.0 / cfg.ppg_rate_hz)
        for ch in range(3):
            spec = np.abs(np.fft.rfft(acc[:, ch]))
            assert 1.7 <= freqs[np.argmax(spec)] <= 2.3

    def test_clean_ppg_peaks_recoverable_within_one_sample(self):
        cfg = SimConfig(seed=4)
        _, _, clean, peaks_true = synth_ppg_with_motion(cfg, 60.0, "rest")
        det = dsp.detect_peaks(
            clean, cfg.ppg_rate_hz,
            dsp.PeakConfig(0.6, 0.5 * float(np.std(clean))))
        interior = peaks_true[peaks_true <= 60.0 - cfg.pulse_width_s]
        assert len(det) >= len(interior)
        for t_true in interior:
            assert np.min(np.abs(det - t_true * cfg.ppg_rate_hz)) <= 1.0

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError, match="rest or walk"):
            synth_ppg_with_motion(SimConfig(), 10.0, "run")

    def test_deterministic(self):
        a = synth_ppg_with_motion(SimConfig(seed=9), 20.0, "walk")
        b = synth_ppg_with_motion(SimConfig(seed=9), 20.0, "walk")
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


class TestSynthEeg:
    def test_mixture_definition_holds(self):
        X, A, S = synth_eeg_mixture(SimConfig(seed=0), 10.0, 4)
        np.testing.assert_allclose(X, S @ A.T, atol=1e-12)
        assert X.shape == (1280, 4)

    def test_mixing_condition_bounded(self):
        for seed in range(5):
            _, A, _ = synth_eeg_mixture(SimConfig(seed=seed), 2.0, 4)
            assert np.linalg.cond(A) < 10.0

    def test_sources_unit_variance(self):
        _, _, S = synth_eeg_mixture(SimConfig(seed=1), 60.0, 3)
        np.testing.assert_allclose(np.var(S, axis=0), 1.0, rtol=0.1)

    def test_blink_source_is_burst_train(self):
        X, A, S = synth_eeg_mixture(SimConfig(seed=2), 30.0, 4, blink=True)
        s0 = S[:, 0]
        assert np.max(s0) > 4.0            # burst amplitude
        assert np.median(np.abs(s0)) < 0.2  # quiet between bursts
        np.testing.assert_allclose(X, S @ A.T, atol=1e-12)

    def test_deterministic(self):
        a = synth_eeg_mixture(SimConfig(seed=3), 5.0, 4)
        b = synth_eeg_mixture(SimConfig(seed=3), 5.0, 4)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)


class TestTruthMap:
    def test_forward_invert_round_trip(self):
        rng = np.random.default_rng(0)
        tm = make_truth_map(rng, GEOM)
        pupils = np.array([(u, v) for u in (0.1, 0.5, 0.9) for v in (0.2, 0.8)])
        screens = tm.forward(pupils)
        back = np.array([tm.invert(s) for s in screens])
        np.testing.assert_allclose(back, pupils, atol=1e-9)

    def test_invert_then_forward(self):
        rng = np.random.default_rng(1)
        tm = make_truth_map(rng, GEOM)
        screens = np.array([[300.0, 200.0], [960.0, 540.0], [1700.0, 950.0]])
        for s in screens:
            np.testing.assert_allclose(tm.forward(tm.invert(s))[0], s, atol=1e-8)

    def test_unit_square_maps_inside_screen(self):
        for seed in range(5):
            tm = make_truth_map(np.random.default_rng(seed), GEOM)
            corners = np.array([(0, 0), (0, 1), (1, 0), (1, 1)], dtype=float)
            out = tm.forward(corners)
            assert np.all(out[:, 0] >= 0) and np.all(out[:, 0] <= 1920)
            assert np.all(out[:, 1] >= 0) and np.all(out[:, 1] <= 1080)


class TestSynthGaze:
    def test_noise_free_gaze_sits_on_targets(self):
        cfg = SimConfig(seed=0)
        targets = calibration_grid(GEOM)
        trial = synth_gaze(cfg, targets, drift_deg=0.0, jitter_deg=0.0)
        expect = targets[trial.target_index]
        np.testing.assert_allclose(trial.gaze_px, expect, atol=1e-9)
        np.testing.assert_allclose(trial.truth_map.forward(trial.pupil),
                                   expect, atol=1e-6)

    def test_sample_layout(self):
        cfg = SimConfig(seed=0)
        targets = calibration_grid(GEOM)
        trial = synth_gaze(cfg, targets, jitter_deg=0.0)
        per_fix = int(round(cfg.fixation_s * cfg.gaze_rate_hz))
        assert len(trial.times) == 9 * per_fix
        np.testing.assert_allclose(np.diff(trial.times), 1.0 / 30.0, atol=1e-12)
        assert np.array_equal(np.unique(trial.target_index), np.arange(9))
        assert len(trial.events) == 9
        t0, text = trial.events[0]
        assert text == f"target 0 {targets[0, 0]:.1f} {targets[0, 1]:.1f}"
        assert np.all(trial.confidence == 1.0)

    def test_drift_offsets_every_sample_exactly(self):
        cfg = SimConfig(seed=1)
        targets = calibration_grid(GEOM)
        trial = synth_gaze(cfg, targets, drift_deg=0.42, jitter_deg=0.0)
        for g, k in zip(trial.gaze_px, trial.target_index):
            assert angular_offset(g, targets[k], GEOM) == pytest.approx(0.42, abs=1e-9)

    def test_jitter_rms_matches_request(self):
        cfg = SimConfig(seed=2, fixation_s=40.0)  # long run for tight MC
        trial = synth_gaze(cfg, [[960.0, 540.0]], jitter_deg=0.2)
        offs = [angular_offset(g, (960.0, 540.0), GEOM) for g in trial.gaze_px]
        rms = float(np.sqrt(np.mean(np.square(offs))))
        assert rms == pytest.approx(0.2, rel=0.1)

    def test_jitter_precision_is_sqrt2_scaled(self):
        # independent per-sample displacements: successive differences carry
        # twice the variance, so RMS precision is jitter * sqrt(2)
        cfg = SimConfig(seed=3, fixation_s=40.0)
        trial = synth_gaze(cfg, [[960.0, 540.0]], jitter_deg=0.2)
        prec = gaze_precision([trial.gaze_px], GEOM)
        assert prec == pytest.approx(0.2 * np.sqrt(2.0), rel=0.1)

    def test_shared_truth_map_and_rng(self):
        cfg = SimConfig(seed=4)
        rng = np.random.default_rng(cfg.seed)
        tm = make_truth_map(rng, GEOM)
        trial = synth_gaze(cfg, calibration_grid(GEOM), truth_map=tm, rng=rng)
        assert trial.truth_map is tm

    def test_deterministic(self):
        a = synth_gaze(SimConfig(seed=5), calibration_grid(GEOM))
        b = synth_gaze(SimConfig(seed=5), calibration_grid(GEOM))
        assert np.array_equal(a.pupil, b.pupil)
        assert np.array_equal(a.gaze_px, b.gaze_px)


class TestTargetLayouts:
    def test_calibration_grid_is_3x3_at_margins(self):
        g = calibration_grid(GEOM)
        assert g.shape == (9, 2)
        np.testing.assert_allclose(g[0], [192.0, 108.0])
        np.testing.assert_allclose(g[4], [960.0, 540.0])
        np.testing.assert_allclose(g[8], [1728.0, 972.0])

    def test_scatter_targets_margins_and_separation(self):
        rng = np.random.default_rng(7)
        pts = scatter_targets(20, GEOM, rng)
        assert pts.shape == (20, 2)
        assert np.all(pts[:, 0] >= 0.05 * 1920) and np.all(pts[:, 0] <= 0.95 * 1920)
        assert np.all(pts[:, 1] >= 0.05 * 1080) and np.all(pts[:, 1] <= 0.95 * 1080)
        for i in range(20):
            for j in range(i + 1, 20):
                assert angular_offset(pts[i], pts[j], GEOM) >= 2.0

    def test_scatter_deterministic_per_seed(self):
        a = scatter_targets(10, GEOM, np.random.default_rng(1))
        b = scatter_targets(10, GEOM, np.random.default_rng(1))
        assert np.array_equal(a, b)

    def test_impossible_separation_raises(self):
        with pytest.raises(RuntimeError, match="separation"):
            scatter_targets(10, GEOM, np.random.default_rng(0), min_sep_deg=25.0)


class TestLink:
    def test_ideal_link_is_transparent(self):
        frames = [(0.1 * k, f"frame{k}".encode()) for k in range(5)]
        delayed, exchanges = simulate_link(frames, base_delay_s=0.0,
                                           jitter_s=0.0, offset_s=0.0)
        for (ts, fs), (td, fd) in zip(frames, delayed):
            assert td == ts and fd is fs
        off, rtt = estimate_clock_offset(exchanges)
        assert off == 0.0
        assert rtt == pytest.approx(0.0, abs=1e-12)

    def test_fifo_ordering_preserved(self):
        rng_frames = [(0.001 * k, bytes([k])) for k in range(200)]
        delayed, _ = simulate_link(rng_frames, base_delay_s=0.002,
                                   jitter_s=0.010, seed=3)
        times = [t for t, _ in delayed]
        assert all(b >= a for a, b in zip(times, times[1:]))
        assert [f for _, f in delayed] == [f for _, f in rng_frames]

    def test_injected_offset_recovered_within_1ms(self):
        exchanges = make_clock_exchanges(0.010, n=10, jitter_s=0.005,
                                         rng=np.random.default_rng(42))
        off, _ = estimate_clock_offset(exchanges)
        assert abs(off - 0.010) < 1e-3

    def test_negative_offset_recovered(self):
        exchanges = make_clock_exchanges(-0.25, n=10, jitter_s=0.002,
                                         rng=np.random.default_rng(11))
        off, _ = estimate_clock_offset(exchanges)
        assert abs(off + 0.25) < 1e-3

    def test_exchange_arithmetic(self):
        (ex,) = make_clock_exchanges(0.5, n=1, jitter_s=0.0, base_delay_s=0.004,
                                     rng=np.random.default_rng(0))
        assert ex.offset() == pytest.approx(0.5, abs=1e-12)
        assert ex.rtt() == pytest.approx(0.008, abs=1e-12)

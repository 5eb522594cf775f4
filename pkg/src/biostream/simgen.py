"""Seeded signal generators standing in for all hardware.

Every generator derives its randomness from numpy's default_rng seeded by the
config, so identical configs give bit-identical output. The ECG and PPG
generators draw their beat sequence first through the same code path, which
makes a PPG run and its ECG reference agree on the underlying heart without
any shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .gaze import ScreenGeometry, angular_offset
from .sync import ClockExchange


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    ecg_rate_hz: float = 1000.0
    ppg_rate_hz: float = 100.0
    eeg_rate_hz: float = 128.0
    gaze_rate_hz: float = 30.0
    hr_bpm: float | tuple[float, float] = 72.0   # constant, or (start, end) ramp
    rr_jitter_ms: float = 30.0
    ecg_noise: float = 0.02
    ppg_noise: float = 0.02
    accel_noise: float = 0.01
    artifact_snr_db: float = 0.0
    fir_taps: int = 8
    quantize_12bit: bool = False
    pulse_width_s: float = 0.30
    pulse_transit_s: float = 0.20
    gaze_jitter_deg: float = 0.1
    fixation_s: float = 0.5
    screen: ScreenGeometry = field(
        default_factory=lambda: ScreenGeometry(1920, 1080, 0.25, 700.0))

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=seed)


def _hr_at(cfg: SimConfig, t: float, duration: float) -> float:
    if isinstance(cfg.hr_bpm, tuple):
        lo, hi = cfg.hr_bpm
        frac = 0.0 if duration <= 0 else min(max(t / duration, 0.0), 1.0)
        return lo + (hi - lo) * frac
    return float(cfg.hr_bpm)


def _beat_times(rng, cfg: SimConfig, duration: float) -> np.ndarray:
    """RR_i = 60/HR(t) + N(0, sigma_rr), floored at 0.25 s.

    The first beat lands half an RR interval in, so a duration covering k
    full intervals holds exactly round(duration/RR) beats and no beat sits
    on the very first sample.
    """
    t, out = 30.0 / _hr_at(cfg, 0.0, duration), []
    while t < duration:
        out.append(t)
        rr = 60.0 / _hr_at(cfg, t, duration) + rng.normal(0.0, cfg.rr_jitter_ms / 1000.0)
        t += max(0.25, rr)
    return np.asarray(out)


def _quantize(x: np.ndarray, bits: int = 12) -> np.ndarray:
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        return x.copy()
    q = (1 << bits) - 1
    return np.round((x - lo) / (hi - lo) * q) / q * (hi - lo) + lo


def synth_ecg(cfg: SimConfig, duration: float):
    """Gaussian QRS pulses at the beat times plus white noise.

    Returns (samples, beat times). The QRS has sigma 10 ms, so the visible
    complex is about 20 ms wide.
    """
    rng = np.random.default_rng(cfg.seed)
    beats = _beat_times(rng, cfg, duration)
    n = int(round(duration * cfg.ecg_rate_hz))
    t = np.arange(n) / cfg.ecg_rate_hz
    x = np.zeros(n)
    for b in beats:
        m = (t > b - 0.06) & (t < b + 0.06)
        x[m] += np.exp(-0.5 * ((t[m] - b) / 0.010) ** 2)
    x += rng.normal(0.0, cfg.ecg_noise, n)
    if cfg.quantize_12bit:
        x = _quantize(x)
    return x, beats


def _raised_cosine_train(beats, rate, n, width, delay):
    t = np.arange(n) / rate
    x = np.zeros(n)
    peaks = []
    for b in beats:
        s = b + delay
        m = (t >= s) & (t < s + width)
        x[m] += 0.5 * (1.0 - np.cos(2.0 * np.pi * (t[m] - s) / width))
        peaks.append(s + width / 2.0)
    return x, np.asarray(peaks)


WALK_CADENCE_HZ = (1.85, 2.0, 2.15)


def synth_ppg_with_motion(cfg: SimConfig, duration: float, scenario: str):
    """Motion-corrupted PPG with its coupled 3-axis accelerometer.

    Clean PPG is a raised-cosine pulse train at the beat times with a 0.2 s
    pulse transit delay. In the walk scenario the accelerometer carries
    three near-2 Hz sinusoids (in-band on purpose) and the artifact added to
    the PPG is per-channel FIR-filtered accelerometer scaled to the
    configured SNR against the clean signal, so it is exactly a causal
    linear function of the emitted references. At rest the accelerometer is
    noise floor only and no artifact is added.

    Returns (ppg, accel [n x 3], clean ppg, true peak times).
    """
    if scenario not in ("rest", "walk"):
        raise ValueError(f"scenario must be rest or walk, got {scenario!r}")
    rng = np.random.default_rng(cfg.seed)
    beats = _beat_times(rng, cfg, duration)
    n = int(round(duration * cfg.ppg_rate_hz))
    t = np.arange(n) / cfg.ppg_rate_hz
    clean, peaks = _raised_cosine_train(beats, cfg.ppg_rate_hz, n,
                                        cfg.pulse_width_s, cfg.pulse_transit_s)
    walk = scenario == "walk"
    acc = np.zeros((n, 3))
    for k, f in enumerate(WALK_CADENCE_HZ):
        if walk:
            amp = rng.uniform(0.5, 1.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            acc[:, k] = amp * np.sin(2.0 * np.pi * f * t + phase)
        acc[:, k] += rng.normal(0.0, cfg.accel_noise, n)
    if walk:
        art = np.zeros(n)
        for k in range(3):
            h = rng.normal(0.0, 1.0, cfg.fir_taps)
            art += signal.lfilter(h, [1.0], acc[:, k])
        p_clean, p_art = np.var(clean), np.var(art)
        if p_art > 0:
            art *= np.sqrt(p_clean / p_art * 10.0 ** (-cfg.artifact_snr_db / 10.0))
    else:
        art = np.zeros(n)
    ppg = clean + art + rng.normal(0.0, cfg.ppg_noise, n)
    if cfg.quantize_12bit:
        ppg = _quantize(ppg)
    return ppg, acc, clean, peaks


def synth_eeg_mixture(cfg: SimConfig, duration: float, n_sources: int,
                      blink: bool = False, max_condition: float = 10.0):
    """Laplacian i.i.d. sources through a random well-conditioned mixing.

    Returns (channels [n x k], mixing A, sources [n x k]) with X = S A^T,
    i.e. x(t) = A s(t). A is redrawn until cond(A) < max_condition. With
    blink=True, source 0 becomes a low-frequency burst train (a convenient
    stand-in for eye-blink artifacts).
    """
    rng = np.random.default_rng(cfg.seed)
    n = int(round(duration * cfg.eeg_rate_hz))
    S = rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(n, n_sources))
    if blink and n_sources >= 1:
        t = np.arange(n) / cfg.eeg_rate_hz
        s0 = np.zeros(n)
        tb = 1.0
        while tb < duration - 0.4:
            m = (t >= tb) & (t < tb + 0.3)
            s0[m] += 6.0 * 0.5 * (1.0 - np.cos(2.0 * np.pi * (t[m] - tb) / 0.3))
            tb += rng.uniform(1.5, 4.0)
        S[:, 0] = s0 + rng.normal(0.0, 0.05, n)
    while True:
        A = rng.normal(0.0, 1.0, size=(n_sources, n_sources))
        if np.linalg.cond(A) < max_condition:
            break
    X = S @ A.T
    return X, A, S


# ---------------------------------------------------------------------------
# gaze

@dataclass
class TruthMap:
    """Invertible ground-truth quadratic map from pupil [0,1]^2 to screen px."""

    coef_x: np.ndarray   # over {1, u, v, u*v, u^2, v^2}
    coef_y: np.ndarray

    def forward(self, pupil) -> np.ndarray:
        P = np.atleast_2d(np.asarray(pupil, dtype=np.float64))
        u, v = P[:, 0], P[:, 1]
        M = np.column_stack([np.ones_like(u), u, v, u * v, u ** 2, v ** 2])
        return np.column_stack([M @ self.coef_x, M @ self.coef_y])

    def _jacobian(self, u: float, v: float) -> np.ndarray:
        cx, cy = self.coef_x, self.coef_y
        return np.array([
            [cx[1] + cx[3] * v + 2 * cx[4] * u, cx[2] + cx[3] * u + 2 * cx[5] * v],
            [cy[1] + cy[3] * v + 2 * cy[4] * u, cy[2] + cy[3] * u + 2 * cy[5] * v],
        ])

    def invert(self, screen_px, tol: float = 1e-12, max_iter: int = 25) -> np.ndarray:
        """Newton inversion, one screen point to one pupil point."""
        s = np.asarray(screen_px, dtype=np.float64)
        # affine initial guess from the linear part
        A = np.array([[self.coef_x[1], self.coef_x[2]],
                      [self.coef_y[1], self.coef_y[2]]])
        b = np.array([self.coef_x[0], self.coef_y[0]])
        p = np.linalg.solve(A, s - b)
        for _ in range(max_iter):
            r = self.forward(p)[0] - s
            if np.max(np.abs(r)) < tol:
                break
            p = p - np.linalg.solve(self._jacobian(p[0], p[1]), r)
        return p


def make_truth_map(rng, geom: ScreenGeometry) -> TruthMap:
    """Random small quadratic bend on top of the margins-affine map."""
    w, h = geom.width_px, geom.height_px
    coef_x = np.array([0.1 * w, 0.8 * w, 0.0, 0.0, 0.0, 0.0])
    coef_y = np.array([0.1 * h, 0.0, 0.8 * h, 0.0, 0.0, 0.0])
    coef_x[2:] += w * rng.uniform(-0.03, 0.03, 4)
    coef_y[1] += h * rng.uniform(-0.03, 0.03)
    coef_y[3:] += h * rng.uniform(-0.03, 0.03, 3)
    return TruthMap(coef_x=coef_x, coef_y=coef_y)


def _tangent_basis(r0: np.ndarray):
    ex = np.array([1.0, 0.0, 0.0])
    u = ex - np.dot(ex, r0) * r0
    u /= np.linalg.norm(u)
    v = np.cross(r0, u)
    return u, v


def _displace_ray(target_px, dx_deg: float, dy_deg: float,
                  geom: ScreenGeometry) -> np.ndarray:
    """Screen point whose ray sits exactly hypot(dx, dy) degrees from the
    target's ray, in the tangent direction (dx, dy)."""
    x = (target_px[0] - geom.width_px / 2.0) * geom.pixel_pitch_mm
    y = (target_px[1] - geom.height_px / 2.0) * geom.pixel_pitch_mm
    r0 = np.array([x, y, geom.viewing_distance_mm])
    r0 /= np.linalg.norm(r0)
    rho = np.hypot(dx_deg, dy_deg)
    if rho == 0.0:
        r = r0
    else:
        u, v = _tangent_basis(r0)
        direction = (dx_deg * u + dy_deg * v) / rho
        a = np.radians(rho)
        r = np.cos(a) * r0 + np.sin(a) * direction
    scale = geom.viewing_distance_mm / r[2]
    gx = r[0] * scale / geom.pixel_pitch_mm + geom.width_px / 2.0
    gy = r[1] * scale / geom.pixel_pitch_mm + geom.height_px / 2.0
    return np.array([gx, gy])


@dataclass
class GazeTrial:
    """One scanpath pass with full ground truth."""

    times: np.ndarray
    pupil: np.ndarray          # [n x 2] in [0,1]^2
    confidence: np.ndarray
    gaze_px: np.ndarray        # the actually-gazed screen point per sample
    target_index: np.ndarray
    targets: np.ndarray
    events: list[tuple[float, str]]
    truth_map: TruthMap


def synth_gaze(cfg: SimConfig, scanpath_targets, drift_deg: float = 0.0,
               jitter_deg: float | None = None, truth_map: TruthMap | None = None,
               rng=None, t_start: float = 0.0) -> GazeTrial:
    """Fixation-by-fixation gaze over the scanpath targets.

    Each target is fixated for cfg.fixation_s. Per sample, the gazed point
    is the target's ray rotated by an exactly-Gaussian angular displacement:
    each tangent axis gets sigma = jitter_deg / sqrt(2), so the RMS radial
    deviation per sample equals jitter_deg. A nonzero drift_deg adds a
    constant angular offset in a random direction (drawn once per call).
    Pupil coordinates are the exact inverse of the ground-truth quadratic
    map at the gazed point.
    """
    if jitter_deg is None:
        jitter_deg = cfg.gaze_jitter_deg
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if truth_map is None:
        truth_map = make_truth_map(rng, cfg.screen)
    targets = np.atleast_2d(np.asarray(scanpath_targets, dtype=np.float64))
    per_fix = max(2, int(round(cfg.fixation_s * cfg.gaze_rate_hz)))
    dt = 1.0 / cfg.gaze_rate_hz
    sigma_axis = jitter_deg / np.sqrt(2.0)
    if drift_deg > 0:
        phi = rng.uniform(0.0, 2.0 * np.pi)
        drift = np.array([drift_deg * np.cos(phi), drift_deg * np.sin(phi)])
    else:
        drift = np.zeros(2)
    times, pupil, gaze, tidx, events = [], [], [], [], []
    t = t_start
    for k, tgt in enumerate(targets):
        events.append((t, f"target {k} {tgt[0]:.1f} {tgt[1]:.1f}"))
        for _ in range(per_fix):
            dx, dy = rng.normal(0.0, sigma_axis, 2) + drift
            g = _displace_ray(tgt, dx, dy, cfg.screen)
            times.append(t)
            gaze.append(g)
            pupil.append(truth_map.invert(g))
            tidx.append(k)
            t += dt
    return GazeTrial(
        times=np.asarray(times),
        pupil=np.asarray(pupil),
        confidence=np.ones(len(times)),
        gaze_px=np.asarray(gaze),
        target_index=np.asarray(tidx, dtype=np.intp),
        targets=targets,
        events=events,
        truth_map=truth_map,
    )


def calibration_grid(geom: ScreenGeometry) -> np.ndarray:
    """The 3x3 calibration target grid at 10/50/90% of the screen extent."""
    xs = [0.1, 0.5, 0.9]
    return np.array([[fx * geom.width_px, fy * geom.height_px]
                     for fy in xs for fx in xs])


def scatter_targets(n: int, geom: ScreenGeometry, rng, margin: float = 0.05,
                    min_sep_deg: float = 2.0) -> np.ndarray:
    """n test targets scattered uniformly with a margin off the edges.

    Targets are redrawn until pairwise angular separation stays above
    min_sep_deg, keeping fixations distinct for the dispersion segmenter and
    the nearest-target matcher.
    """
    out: list[np.ndarray] = []
    attempts = 0
    while len(out) < n:
        p = np.array([rng.uniform(margin, 1.0 - margin) * geom.width_px,
                      rng.uniform(margin, 1.0 - margin) * geom.height_px])
        attempts += 1
        if attempts > 200 * n:
            raise RuntimeError("could not place targets with the requested separation")
        if all(angular_offset(p, q, geom) >= min_sep_deg for q in out):
            out.append(p)
    return np.array(out)


# ---------------------------------------------------------------------------
# link simulation

def make_clock_exchanges(true_offset_s: float, n: int = 10,
                         jitter_s: float = 0.005, base_delay_s: float = 0.0,
                         proc_delay_s: float = 1e-4, rng=None,
                         t_start: float = 0.0) -> list[ClockExchange]:
    """Two-way exchanges over a jittery link with a known remote offset.

    Remote clock = local clock + true_offset_s; each direction's delay is
    base + U(0, jitter).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    t0 = t_start
    for _ in range(n):
        d1 = base_delay_s + rng.uniform(0.0, jitter_s)
        d2 = base_delay_s + rng.uniform(0.0, jitter_s)
        t1 = t0 + d1 + true_offset_s
        t2 = t1 + proc_delay_s
        t3 = t2 - true_offset_s + d2
        out.append(ClockExchange(t0=t0, t1=t1, t2=t2, t3=t3))
        t0 = t3 + 0.05
    return out


def simulate_link(frames, base_delay_s: float = 0.002, jitter_s: float = 0.003,
                  offset_s: float = 0.0, seed: int = 0, n_exchanges: int = 10):
    """Delay timed frames over a FIFO jittery link and run a sync burst.

    frames is a list of (t_send, frame_bytes). Returns (delayed frames as
    (t_recv, frame_bytes), clock exchanges for the same link parameters).
    Ordering is preserved: a frame never overtakes an earlier one.
    """
    rng = np.random.default_rng(seed)
    delayed = []
    t_prev = -np.inf
    for t_send, frame in frames:
        d = base_delay_s + rng.uniform(0.0, jitter_s)
        t_recv = max(t_prev, t_send + d)
        delayed.append((t_recv, frame))
        t_prev = t_recv
    exchanges = make_clock_exchanges(offset_s, n=n_exchanges, jitter_s=jitter_s,
                                     base_delay_s=base_delay_s, rng=rng)
    return delayed, exchanges

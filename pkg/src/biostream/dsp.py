"""PPG processing chain: band-pass filtering, multi-reference adaptive noise
cancellation, peak detection, heart rate and HRV.

The canceller is a normalized LMS with a decaying step size. The defaults
(mu 0.3 decaying hyperbolically over ~3 s at 100 Hz, regularizer 0.1) were
tuned on the simulated rest/walk scenarios: the large regularizer freezes the
weights when the references sit at the noise floor (rest must stay
untouched), and the decay removes steady-state misadjustment once the motion
coupling has been learned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal


class BiquadCascade:
    """Cascade of second-order sections with persistent streaming state.

    sections is [k x 5], rows (b0, b1, b2, a1, a2) with a0 normalized to 1.
    State initializes on the first sample so that a constant input produces
    no startup transient; the initialization is linear in the input, which
    keeps the whole operator linear.
    """

    def __init__(self, sections, sample_rate_hz: float):
        sections = np.atleast_2d(np.asarray(sections, dtype=np.float64))
        if sections.shape[1] != 5:
            raise ValueError("sections must be rows of (b0, b1, b2, a1, a2)")
        self.sample_rate_hz = float(sample_rate_hz)
        self._sos = np.column_stack([
            sections[:, 0], sections[:, 1], sections[:, 2],
            np.ones(len(sections)), sections[:, 3], sections[:, 4],
        ])
        self._zi = None

    @property
    def sections(self) -> np.ndarray:
        s = self._sos
        return np.column_stack([s[:, 0], s[:, 1], s[:, 2], s[:, 4], s[:, 5]])

    @property
    def n_sections(self) -> int:
        return len(self._sos)

    def is_stable(self) -> bool:
        for sec in self._sos:
            poles = np.roots([1.0, sec[4], sec[5]])
            if np.any(np.abs(poles) >= 1.0):
                return False
        return True

    def reset(self):
        self._zi = None

    def copy(self) -> "BiquadCascade":
        return BiquadCascade(self.sections, self.sample_rate_hz)

    def apply(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        if x.size == 0:
            return x.copy()
        if self._zi is None:
            self._zi = signal.sosfilt_zi(self._sos) * x[0]
        y, self._zi = signal.sosfilt(self._sos, x, zi=self._zi)
        return y


def design_bandpass(low_hz: float, high_hz: float, order: int,
                    sample_rate_hz: float) -> BiquadCascade:
    """Butterworth band-pass as second-order sections.

    Bilinear transform with frequency pre-warping (scipy's butter), so the
    -3 dB points land on the requested edges. `order` is the analog
    prototype order; the band-pass realization has 2*order poles.
    """
    if not (0 < low_hz < high_hz < sample_rate_hz / 2):
        raise ValueError(
            f"band ({low_hz}, {high_hz}) must satisfy 0 < low < high < rate/2"
        )
    if order < 1:
        raise ValueError("order must be >= 1")
    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass",
                        fs=sample_rate_hz, output="sos")
    sections = np.column_stack([sos[:, 0], sos[:, 1], sos[:, 2], sos[:, 4], sos[:, 5]])
    return BiquadCascade(sections, sample_rate_hz)


def filter_apply(cascade: BiquadCascade, samples) -> np.ndarray:
    """Causal streaming application; state persists across calls."""
    return cascade.apply(samples)


class AncState:
    """Weights and reference history of the multi-reference NLMS canceller.

    step(k) = mu / (1 + k / tau) where k counts samples seen; tau=None gives
    a constant step. eps regularizes the power normalization and sets the
    reference power below which updates effectively stop.
    """

    def __init__(self, n_refs: int, taps: int = 32, mu: float = 0.3,
                 tau: float | None = 300.0, eps: float = 0.1):
        if not 0 <= mu < 2:
            raise ValueError("mu must be in [0, 2)")
        if taps < 1 or n_refs < 1:
            raise ValueError("need at least one tap and one reference")
        self.n_refs = int(n_refs)
        self.taps = int(taps)
        self.mu = float(mu)
        self.tau = None if tau is None else float(tau)
        self.eps = float(eps)
        self.weights = np.zeros((self.n_refs, self.taps))
        self.history = np.zeros((self.n_refs, self.taps))
        self.samples_seen = 0

    def step_size(self) -> float:
        if self.tau is None:
            return self.mu
        return self.mu / (1.0 + self.samples_seen / self.tau)


def anc_cancel(primary, references, state: AncState | None = None,
               **state_kwargs) -> tuple[np.ndarray, AncState]:
    """Cancel reference-correlated noise from the primary signal.

    references is [n x n_refs], time-aligned with primary at the same rate.
    Per sample: y_hat = sum_k w_k . x_k(history), e = d - y_hat, then
    w_k += step/(eps + total reference power) * e * x_k. Returns (e, state).
    """
    d = np.asarray(primary, dtype=np.float64)
    X = np.asarray(references, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(d) != len(X):
        raise ValueError(f"primary has {len(d)} samples, references {len(X)}")
    if state is None:
        state = AncState(n_refs=X.shape[1], **state_kwargs)
    if X.shape[1] != state.n_refs:
        raise ValueError(f"state expects {state.n_refs} references, got {X.shape[1]}")
    w, hist = state.weights, state.history
    eps = state.eps
    e = np.empty_like(d)
    for i in range(len(d)):
        hist[:, 1:] = hist[:, :-1]
        hist[:, 0] = X[i]
        e[i] = d[i] - np.sum(w * hist)
        mu = state.step_size()
        if mu:
            w += (mu / (eps + np.sum(hist * hist))) * e[i] * hist
        state.samples_seen += 1
    return e, state


@dataclass(frozen=True)
class PeakConfig:
    min_distance_s: float
    min_prominence: float = 0.0


def detect_peaks(samples, sample_rate_hz: float, config: PeakConfig) -> np.ndarray:
    """Indices of strict local maxima, prominence-filtered, then greedily
    retained in descending amplitude with a minimum spacing.

    A candidate closer than min_distance to an already-kept (taller) peak is
    suppressed; spacing of exactly min_distance survives. Output ascending.
    """
    x = np.asarray(samples, dtype=np.float64)
    min_dist = int(round(config.min_distance_s * sample_rate_hz))
    if min_dist < 1:
        raise ValueError("min_distance_s * sample_rate_hz must be >= 1")
    if x.size < 3:
        return np.empty(0, dtype=np.intp)
    cand = np.where((x[1:-1] > x[:-2]) & (x[1:-1] > x[2:]))[0] + 1
    if cand.size == 0:
        return np.empty(0, dtype=np.intp)
    if config.min_prominence > 0:
        prom = signal.peak_prominences(x, cand)[0]
        cand = cand[prom >= config.min_prominence]
        if cand.size == 0:
            return np.empty(0, dtype=np.intp)
    order = cand[np.argsort(-x[cand], kind="stable")]
    kept: list[int] = []
    for c in order:
        if all(abs(int(c) - k) >= min_dist for k in kept):
            kept.append(int(c))
    return np.array(sorted(kept), dtype=np.intp)


def heart_rate(peak_indices, sample_rate_hz: float, window_s: float = 15.0,
               duration_s: float | None = None) -> list[float | None]:
    """Per-window heart rate, windows tiling the recording without overlap.

    HR = 60 / mean(successive peak intervals inside the window). A window
    holding fewer than two peaks yields None (missing, not zero).
    """
    t = np.asarray(peak_indices, dtype=np.float64) / sample_rate_hz
    if duration_s is None:
        duration_s = float(np.ceil(t[-1] / window_s) * window_s) if t.size else 0.0
    out: list[float | None] = []
    k = 0
    while k * window_s < duration_s:
        sel = t[(t >= k * window_s) & (t < (k + 1) * window_s)]
        if sel.size >= 2:
            out.append(60.0 / float(np.mean(np.diff(sel))))
        else:
            out.append(None)
        k += 1
    return out


@dataclass(frozen=True)
class HrvReport:
    mean_hr_bpm: float
    sdnn_ms: float
    rmssd_ms: float
    n_intervals: int


def hrv_metrics(peak_indices, sample_rate_hz: float) -> HrvReport:
    """SDNN (population std of RR) and RMSSD over the whole peak train."""
    idx = np.asarray(peak_indices, dtype=np.float64)
    if idx.size < 3:
        raise ValueError("hrv_metrics needs at least 3 peaks")
    rr_ms = np.diff(idx) / sample_rate_hz * 1000.0
    sdnn = float(np.std(rr_ms))
    rmssd = float(np.sqrt(np.mean(np.diff(rr_ms) ** 2)))
    mean_hr = 60000.0 / float(np.mean(rr_ms))
    return HrvReport(mean_hr_bpm=mean_hr, sdnn_ms=sdnn, rmssd_ms=rmssd,
                     n_intervals=len(rr_ms))

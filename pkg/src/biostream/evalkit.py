"""Evaluation procedures as reusable reports: normalized HR error,
Bland-Altman agreement, and the scripted rest/walk and gaze
calibration/drift protocols.

Scenario runs are fully seeded; a report records its seed and reruns are
bit-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsp, gaze, simgen

HR_WINDOW_S = 15.0
PPG_PEAK_DISTANCE_S = 0.6     # supports scenario HR up to ~100 BPM
PPG_PEAK_PROM_SCALE = 0.5     # of the filtered signal's std
ECG_PEAK_DISTANCE_S = 0.25
ECG_PEAK_PROM_SCALE = 2.0
BAND_LOW_HZ, BAND_HIGH_HZ, BAND_ORDER = 0.8, 4.0, 3


@dataclass
class BlandAltmanReport:
    means: np.ndarray
    diffs: np.ndarray
    bias: float
    sd: float
    loa_low: float
    loa_high: float


def bland_altman(a, b) -> BlandAltmanReport:
    """Agreement between two paired series: bias and 1.96-sd limits.

    Differences are a - b; sd is the sample standard deviation (n-1).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be equal-length one-dimensional")
    if len(a) < 2:
        raise ValueError("need at least 2 pairs")
    diffs = a - b
    means = (a + b) / 2.0
    bias = float(np.mean(diffs))
    sd = float(np.std(diffs, ddof=1))
    return BlandAltmanReport(means=means, diffs=diffs, bias=bias, sd=sd,
                             loa_low=bias - 1.96 * sd, loa_high=bias + 1.96 * sd)


def normalized_error(hr_ppg, hr_ecg) -> np.ndarray:
    """Per-window percent error: 100 * (ppg - ecg) / mean(ppg).

    Inputs may contain None/NaN for missing windows; those windows come back
    NaN. The denominator is the mean of the finite PPG windows.
    """
    p = np.array([np.nan if v is None else float(v) for v in hr_ppg])
    e = np.array([np.nan if v is None else float(v) for v in hr_ecg])
    if p.shape != e.shape:
        raise ValueError("window counts differ")
    finite_p = p[np.isfinite(p)]
    if finite_p.size == 0 or np.mean(finite_p) <= 0:
        raise ValueError("PPG mean heart rate must be positive")
    return 100.0 * (p - e) / float(np.mean(finite_p))


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    data: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.data

    def to_json(self) -> str:
        return json.dumps({
            "scenario": self.scenario,
            "seed": self.seed,
            "summary": _jsonable(self.summary),
            "data": _jsonable(self.data),
        }, indent=2, sort_keys=True)

    def save(self, out_dir, plot: bool = False) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        path = os.path.join(out_dir, f"{self.scenario}_report.json")
        with open(path, "w") as f:
            f.write(self.to_json())
        written.append(path)
        rows = self.data.get("windows")
        if rows:
            cpath = os.path.join(out_dir, f"{self.scenario}_windows.csv")
            with open(cpath, "w") as f:
                f.write(",".join(rows["columns"]) + "\n")
                for r in zip(*rows["values"]):
                    f.write(",".join("" if v is None else repr(float(v)) for v in r) + "\n")
            written.append(cpath)
        if plot:
            written.extend(self._plot(out_dir))
        return written

    def _plot(self, out_dir) -> list[str]:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        written = []
        for key in ("bland_altman_anc", "bland_altman_raw"):
            ba = self.data.get(key)
            if not ba:
                continue
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.scatter(ba["means"], ba["diffs"], s=14)
            for yv, style in ((ba["bias"], "-"), (ba["loa_low"], "--"), (ba["loa_high"], "--")):
                ax.axhline(yv, linestyle=style, color="gray")
            ax.set_xlabel("mean HR (BPM)")
            ax.set_ylabel("difference (BPM)")
            ax.set_title(f"{self.scenario}: {key.replace('bland_altman_', '')}")
            path = os.path.join(out_dir, f"{self.scenario}_{key}.svg")
            fig.tight_layout()
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
        trials = self.data.get("trials")
        if trials:
            names = ["pre_accuracy", "post_accuracy", "pre_precision", "post_precision"]
            vals = [np.mean([t[n] for t in trials]) for n in names]
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.bar(range(len(names)), vals)
            ax.set_xticks(range(len(names)), [n.replace("_", "\n") for n in names])
            ax.set_ylabel("degrees")
            ax.set_title("gaze accuracy / precision")
            path = os.path.join(out_dir, f"{self.scenario}_metrics.svg")
            fig.tight_layout()
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
        return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _hr_from_times(peak_times, duration_s) -> list:
    return dsp.heart_rate(np.asarray(peak_times, dtype=np.float64), 1.0,
                          window_s=HR_WINDOW_S, duration_s=duration_s)


def _finite_pairs(a, b):
    pa, pb = [], []
    for x, y in zip(a, b):
        if x is not None and y is not None:
            pa.append(float(x))
            pb.append(float(y))
    return np.asarray(pa), np.asarray(pb)


def _mean_abs(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    return float(np.mean(np.abs(v))) if v.size else float("nan")


def run_ppg_scenario(scenario: str, duration_s: float = 120.0,
                     anc: str = "both", seed: int = 0,
                     config: simgen.SimConfig | None = None) -> ScenarioReport:
    """The rest/walk protocol: simulate, process, compare against ECG.

    Simulates PPG+accelerometer at 100 Hz and reference ECG at 1000 Hz from
    the same beat sequence, band-passes, optionally cancels motion with the
    accelerometer references, detects peaks and derives 15-s window heart
    rates for every chain. anc is "on", "off" or "both".
    """
    if anc not in ("on", "off", "both"):
        raise ValueError("anc must be on, off or both")
    cfg = (config or simgen.SimConfig()).with_seed(seed)
    report = ScenarioReport(scenario=scenario, seed=seed)
    if duration_s <= 0:
        return report
    ppg, acc, clean, true_peaks = simgen.synth_ppg_with_motion(cfg, duration_s, scenario)
    ecg, _ = simgen.synth_ecg(cfg, duration_s)
    fs = cfg.ppg_rate_hz

    def bandpass(x):
        casc = dsp.design_bandpass(BAND_LOW_HZ, BAND_HIGH_HZ, BAND_ORDER, fs)
        return casc.apply(x)

    ppg_f = bandpass(ppg)
    clean_f = bandpass(clean)
    refs = np.column_stack([bandpass(acc[:, k]) for k in range(acc.shape[1])])

    ecg_cfg = dsp.PeakConfig(ECG_PEAK_DISTANCE_S, ECG_PEAK_PROM_SCALE * float(np.std(ecg)))
    ecg_peaks = dsp.detect_peaks(ecg, cfg.ecg_rate_hz, ecg_cfg)
    hr_ecg = dsp.heart_rate(ecg_peaks, cfg.ecg_rate_hz, HR_WINDOW_S, duration_s)
    hr_true = _hr_from_times(true_peaks, duration_s)

    def ppg_hr(x):
        pc = dsp.PeakConfig(PPG_PEAK_DISTANCE_S, PPG_PEAK_PROM_SCALE * float(np.std(x)))
        peaks = dsp.detect_peaks(x, fs, pc)
        return dsp.heart_rate(peaks, fs, HR_WINDOW_S, duration_s)

    windows = {"columns": ["window", "hr_ecg", "hr_true"],
               "values": [list(range(len(hr_ecg))), hr_ecg, hr_true]}
    report.data["windows"] = windows
    report.data["hr_ecg"] = hr_ecg
    report.data["hr_true"] = hr_true
    report.summary.update({"scenario": scenario, "duration_s": duration_s,
                           "n_windows": len(hr_ecg)})

    if anc in ("off", "both"):
        hr_raw = ppg_hr(ppg_f)
        ne_raw = normalized_error(hr_raw, hr_ecg)
        report.data["hr_raw"] = hr_raw
        report.data["normalized_error_raw"] = ne_raw
        a, b = _finite_pairs(hr_raw, hr_ecg)
        if len(a) >= 2:
            ba = bland_altman(a, b)
            report.data["bland_altman_raw"] = {
                "means": ba.means, "diffs": ba.diffs, "bias": ba.bias,
                "sd": ba.sd, "loa_low": ba.loa_low, "loa_high": ba.loa_high}
        report.summary["mean_abs_ne_raw_pct"] = _mean_abs(ne_raw)
        report.summary["mae_raw_bpm"] = _mean_abs(a - b) if len(a) else float("nan")
        windows["columns"].append("hr_raw")
        windows["values"].append(hr_raw)

    if anc in ("on", "both"):
        cleaned, _state = dsp.anc_cancel(ppg_f, refs)
        hr_anc = ppg_hr(cleaned)
        ne_anc = normalized_error(hr_anc, hr_ecg)
        report.data["hr_anc"] = hr_anc
        report.data["normalized_error_anc"] = ne_anc
        a, b = _finite_pairs(hr_anc, hr_ecg)
        if len(a) >= 2:
            ba = bland_altman(a, b)
            report.data["bland_altman_anc"] = {
                "means": ba.means, "diffs": ba.diffs, "bias": ba.bias,
                "sd": ba.sd, "loa_low": ba.loa_low, "loa_high": ba.loa_high}
        report.summary["mean_abs_ne_anc_pct"] = _mean_abs(ne_anc)
        report.summary["mae_anc_bpm"] = _mean_abs(a - b) if len(a) else float("nan")
        windows["columns"].append("hr_anc")
        windows["values"].append(hr_anc)
        settle = int(30.0 * fs)
        if settle < len(cleaned):
            noise_in = ppg_f[settle:] - clean_f[settle:]
            noise_out = cleaned[settle:] - clean_f[settle:]
            if np.var(noise_out) > 0:
                report.summary["noise_reduction_db"] = float(
                    10.0 * np.log10(np.var(noise_in) / np.var(noise_out)))
    return report


def _pass_metrics(model, trial, geom, match_deg: float = 3.0):
    est = gaze.map_points(model, trial.pupil)
    keep = trial.confidence >= gaze.DEFAULT_CONFIDENCE_GATE
    times, est = trial.times[keep], est[keep]
    fixations = gaze.segment_fixations(times, est, geom)
    cents, matched = gaze.match_fixations_to_targets(fixations, trial.targets,
                                                     geom, match_deg)
    if len(cents) == 0:
        raise ValueError("no fixation matched a target")
    acc = gaze.gaze_accuracy(cents, matched, geom)
    runs = [est[fx.indices[0]:fx.indices[1] + 1] for fx in fixations]
    prec = gaze.gaze_precision(runs, geom)
    return acc, prec, len(fixations)


def run_gaze_scenario(trials: int = 3, seed: int = 0, drift_deg: float = 0.42,
                      precision_bump_deg: float = 0.2, n_test_targets: int = 20,
                      config: simgen.SimConfig | None = None) -> ScenarioReport:
    """The calibration/drift protocol, three seeded trials by default.

    Per trial: 9-point calibration, a 20-target pre pass, then an injected
    perturbation standing in for headset movement (a constant angular drift
    plus a jitter increase), and a 20-target post pass. Reports pre/post
    accuracy and precision and their deltas, averaged across trials.

    precision_bump_deg is the targeted *precision* delta; the generator's
    per-sample jitter increases by precision_bump_deg / sqrt(2) so that the
    RMS successive-sample metric moves by the requested amount.
    """
    cfg = config or simgen.SimConfig()
    geom = cfg.screen
    report = ScenarioReport(scenario="gaze", seed=seed)
    if trials <= 0:
        return report
    children = np.random.SeedSequence(seed).spawn(trials)
    rows = []
    for k in range(trials):
        rng = np.random.default_rng(children[k])
        tmap = simgen.make_truth_map(rng, geom)
        calib = simgen.synth_gaze(cfg, simgen.calibration_grid(geom),
                                  truth_map=tmap, rng=rng)
        cents = np.array([calib.pupil[calib.target_index == i].mean(axis=0)
                          for i in range(len(calib.targets))])
        model = gaze.fit_calibration(cents, calib.targets)
        targets = simgen.scatter_targets(n_test_targets, geom, rng)
        pre = simgen.synth_gaze(cfg, targets, truth_map=tmap, rng=rng)
        pre_acc, pre_prec, pre_n = _pass_metrics(model, pre, geom)
        post_jitter = cfg.gaze_jitter_deg + precision_bump_deg / np.sqrt(2.0)
        post = simgen.synth_gaze(cfg, targets, drift_deg=drift_deg,
                                 jitter_deg=post_jitter, truth_map=tmap, rng=rng)
        post_acc, post_prec, post_n = _pass_metrics(model, post, geom)
        rows.append({
            "trial": k,
            "fit_residual_px": model.residual_rms_px,
            "pre_accuracy": pre_acc, "pre_precision": pre_prec,
            "post_accuracy": post_acc, "post_precision": post_prec,
            "accuracy_delta": post_acc - pre_acc,
            "precision_delta": post_prec - pre_prec,
            "n_fixations_pre": pre_n, "n_fixations_post": post_n,
        })
    report.data["trials"] = rows
    for name in ("pre_accuracy", "pre_precision", "post_accuracy",
                 "post_precision", "accuracy_delta", "precision_delta"):
        report.summary[name] = float(np.mean([r[name] for r in rows]))
    report.summary["trials"] = trials
    report.summary["injected_drift_deg"] = drift_deg
    report.summary["injected_precision_bump_deg"] = precision_bump_deg
    return report

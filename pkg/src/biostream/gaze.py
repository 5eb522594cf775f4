"""Gaze pipeline downstream of pupil detection: polynomial calibration,
visual-angle geometry, I-DT fixation segmentation, accuracy/precision
metrics, and gaze-object association for activity tagging.

All angles assume the eye on the screen's center normal at a fixed viewing
distance; screen points convert to millimeter rays (x_mm, y_mm, D) and the
angle between two points is the angle between their rays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CONFIDENCE_GATE = 0.6


@dataclass(frozen=True)
class PupilSample:
    timestamp: float
    px: float
    py: float
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ScreenGeometry:
    width_px: int
    height_px: int
    pixel_pitch_mm: float
    viewing_distance_mm: float

    def __post_init__(self):
        if min(self.width_px, self.height_px) <= 0:
            raise ValueError("screen dimensions must be positive")
        if self.pixel_pitch_mm <= 0 or self.viewing_distance_mm <= 0:
            raise ValueError("pitch and viewing distance must be positive")


@dataclass
class CalibrationModel:
    """Per-coordinate least-squares fit over {1, px, py, px*py, px^2, py^2}."""

    coef_x: np.ndarray
    coef_y: np.ndarray
    residual_rms_px: float


@dataclass
class Fixation:
    start_s: float
    end_s: float
    centroid: tuple[float, float]
    indices: tuple[int, int]  # inclusive sample index range

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def _design_matrix(points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    px, py = P[:, 0], P[:, 1]
    return np.column_stack([np.ones_like(px), px, py, px * py, px ** 2, py ** 2])


def fit_calibration(pupil_points, target_points) -> CalibrationModel:
    """Fit the degree-2 pupil-to-screen map from point correspondences.

    Needs at least 6 pairs (the basis size) and a well-conditioned geometry;
    collinear targets or a design matrix with condition number above 1e8
    raise ValueError.
    """
    P = np.atleast_2d(np.asarray(pupil_points, dtype=np.float64))
    T = np.atleast_2d(np.asarray(target_points, dtype=np.float64))
    if len(P) != len(T):
        raise ValueError("pupil and target point counts differ")
    if len(P) < 6:
        raise ValueError(f"need at least 6 point pairs, got {len(P)}")
    affine = np.column_stack([np.ones(len(T)), T])
    if np.linalg.matrix_rank(affine, tol=1e-8 * max(1.0, np.abs(T).max())) < 3:
        raise ValueError("calibration targets are collinear")
    M = _design_matrix(P)
    if np.linalg.cond(M) > 1e8:
        raise ValueError("calibration geometry is degenerate (ill-conditioned)")
    coef, *_ = np.linalg.lstsq(M, T, rcond=None)
    resid = M @ coef - T
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return CalibrationModel(coef_x=coef[:, 0].copy(), coef_y=coef[:, 1].copy(),
                            residual_rms_px=rms)


def map_points(model: CalibrationModel, pupil_points) -> np.ndarray:
    """Evaluate the calibration polynomials; no clamping to the screen."""
    M = _design_matrix(pupil_points)
    return np.column_stack([M @ model.coef_x, M @ model.coef_y])


def map_gaze(model: CalibrationModel, sample: PupilSample,
             min_confidence: float = DEFAULT_CONFIDENCE_GATE):
    """Screen point for one pupil sample, or None below the confidence gate."""
    if sample.confidence < min_confidence:
        return None
    out = map_points(model, [(sample.px, sample.py)])[0]
    return float(out[0]), float(out[1])


def _rays(points_px, geom: ScreenGeometry) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points_px, dtype=np.float64))
    x = (P[:, 0] - geom.width_px / 2.0) * geom.pixel_pitch_mm
    y = (P[:, 1] - geom.height_px / 2.0) * geom.pixel_pitch_mm
    z = np.full(len(P), geom.viewing_distance_mm)
    v = np.column_stack([x, y, z])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def angular_offset(p, q, geom: ScreenGeometry) -> float:
    """Visual angle in degrees between two screen points."""
    r = _rays([p, q], geom)
    c = float(np.clip(np.dot(r[0], r[1]), -1.0, 1.0))
    return float(np.degrees(np.arccos(c)))


def segment_fixations(times, points_px, geom: ScreenGeometry,
                      dispersion_deg: float = 1.0,
                      min_duration_s: float = 0.1) -> list[Fixation]:
    """Dispersion-threshold (I-DT) fixation segmentation.

    A window grows while the maximum pairwise angular spread stays at or
    under the threshold; it becomes a fixation if it lasts at least
    min_duration_s. Output intervals are disjoint and ordered.
    """
    t = np.asarray(times, dtype=np.float64)
    P = np.atleast_2d(np.asarray(points_px, dtype=np.float64))
    n = len(t)
    if n != len(P):
        raise ValueError("times and points must pair up")
    if n < 2:
        return []
    rays = _rays(P, geom)
    cos_thresh = np.cos(np.radians(dispersion_deg))
    out: list[Fixation] = []
    i = 0
    while i < n - 1:
        j = i
        # extend while every pair in [i, j+1] stays within the dispersion
        while j + 1 < n:
            if np.min(rays[i:j + 2] @ rays[j + 1]) < cos_thresh:
                break
            j += 1
        if j > i and t[j] - t[i] >= min_duration_s:
            c = P[i:j + 1].mean(axis=0)
            out.append(Fixation(start_s=float(t[i]), end_s=float(t[j]),
                                centroid=(float(c[0]), float(c[1])),
                                indices=(i, j)))
            i = j + 1
        else:
            i += 1
    return out


def gaze_accuracy(centroids, targets, geom: ScreenGeometry) -> float:
    """Mean angular offset between fixation centroids and their targets."""
    C = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if C.size == 0 or T.size == 0 or len(C) != len(T):
        raise ValueError("need equal, nonzero centroid/target counts")
    return float(np.mean([angular_offset(c, t, geom) for c, t in zip(C, T)]))


def gaze_precision(fixation_sample_runs, geom: ScreenGeometry) -> float:
    """RMS angular distance between successive samples within fixations.

    Pooled across fixations by successive-pair count: the result is the
    square root of the mean squared successive angle over every pair.
    """
    sq = []
    for run in fixation_sample_runs:
        R = np.atleast_2d(np.asarray(run, dtype=np.float64))
        if len(R) < 2:
            continue
        rays = _rays(R, geom)
        c = np.clip(np.sum(rays[:-1] * rays[1:], axis=1), -1.0, 1.0)
        sq.extend(np.degrees(np.arccos(c)) ** 2)
    if not sq:
        raise ValueError("no successive sample pairs in any fixation")
    return float(np.sqrt(np.mean(sq)))


def match_fixations_to_targets(fixations, targets, geom: ScreenGeometry,
                               max_offset_deg: float = 3.0):
    """Pair each fixation with its nearest target within max_offset_deg.

    Unmatched fixations are dropped. Returns (centroids, matched targets)
    as arrays suitable for gaze_accuracy.
    """
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    cents, matched = [], []
    for fx in fixations:
        offs = [angular_offset(fx.centroid, t, geom) for t in T]
        k = int(np.argmin(offs))
        if offs[k] <= max_offset_deg:
            cents.append(fx.centroid)
            matched.append(T[k])
    return np.array(cents), np.array(matched)


@dataclass(frozen=True)
class LabeledBox:
    """Axis-aligned labeled region in normalized world coordinates."""

    label: str
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float = 1.0

    def area(self) -> float:
        return abs(self.x1 - self.x0) * abs(self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        lo_x, hi_x = sorted((self.x0, self.x1))
        lo_y, hi_y = sorted((self.y0, self.y1))
        return lo_x <= x <= hi_x and lo_y <= y <= hi_y


def parse_object_marker(text: str) -> LabeledBox:
    """Parse the detector marker payload `label,confidence,x0,y0,x1,y1`."""
    parts = text.split(",")
    if len(parts) != 6:
        raise ValueError(f"expected 6 comma-separated fields, got {len(parts)}")
    label = parts[0].strip()
    conf, x0, y0, x1, y1 = (float(p) for p in parts[1:])
    return LabeledBox(label=label, x0=x0, y0=y0, x1=x1, y1=y1, confidence=conf)


def associate_gaze_object(gaze_point, boxes) -> str | None:
    """Label of the smallest-area box containing the point, else None."""
    x, y = float(gaze_point[0]), float(gaze_point[1])
    best = None
    for box in boxes:
        if box.contains(x, y) and (best is None or box.area() < best.area()):
            best = box
    return best.label if best else None

"""Stop-bar kinematics and braking-event detection, validation, severity.

All series work in approach coordinates: r is the radial distance to the
stop bar, v = -dr/dt is the approach speed (positive toward the bar), and
a = dv/dt is the approach acceleration, so braking shows up as a < 0 and
every reported magnitude is |a|.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .correspond import SiteAnnotations
from .errors import TooShortError, ValidationError
from .tracks import Trajectory

DEFAULT_GRID_DT = 0.1  # s
DEFAULT_MERGE_GAP = 0.1  # s

# severity band lower bounds: 0.15g / 0.25g / 0.40g at g = 9.81 m/s^2,
# written as the exact decimal products (0.40 * 9.81 rounds one ulp above
# 3.924 in binary floating point, which would misclassify the boundary)
MILD_LO = 1.4715
MODERATE_LO = 2.4525
SEVERE_LO = 3.924


class Severity(str, Enum):
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"


SEVERITY_ORDER = {Severity.MILD: 0, Severity.MODERATE: 1, Severity.SEVERE: 2}


@dataclass(frozen=True)
class BrakingThresholds:
    a_trigger: float = 0.25  # m/s^2, candidate trigger magnitude
    robust_fraction: float = 0.85
    robust_percentile: float = 5.0  # percent
    min_duration: float = 0.2  # s
    g: float = 9.81  # m/s^2
    mild_lo: float = MILD_LO
    moderate_lo: float = MODERATE_LO
    severe_lo: float = SEVERE_LO

    def __post_init__(self):
        if not (0 < self.mild_lo < self.moderate_lo < self.severe_lo):
            raise ValidationError(
                "severity bounds must satisfy 0 < mild_lo < moderate_lo < severe_lo"
            )
        if self.a_trigger <= 0:
            raise ValidationError(f"a_trigger must be > 0, got {self.a_trigger}")
        if self.min_duration <= 0:
            raise ValidationError(f"min_duration must be > 0, got {self.min_duration}")
        if not (0 < self.robust_fraction <= 1):
            raise ValidationError(
                f"robust_fraction must be in (0,1], got {self.robust_fraction}"
            )
        if not (0 <= self.robust_percentile <= 100):
            raise ValidationError(
                f"robust_percentile must be in [0,100], got {self.robust_percentile}"
            )


@dataclass(frozen=True)
class KinematicSeries:
    t: np.ndarray  # s, strictly increasing uniform grid
    r: np.ndarray  # m, distance to the stop bar
    v: np.ndarray  # m/s, approach speed
    a: np.ndarray  # m/s^2, approach acceleration (negative = braking)
    pos_e: np.ndarray  # m, easting on the same grid (event attribution)
    pos_n: np.ndarray  # m, northing

    def __post_init__(self):
        arrays = (self.t, self.r, self.v, self.a, self.pos_e, self.pos_n)
        n = len(self.t)
        if any(len(arr) != n for arr in arrays):
            raise ValidationError("kinematic series arrays must share one length")
        if np.any(np.diff(self.t) <= 0):
            raise ValidationError("kinematic timestamps must be strictly increasing")
        for arr in arrays:
            arr.setflags(write=False)


@dataclass(frozen=True)
class CandidateWindow:
    """Inclusive index range [i_start, i_end] into a KinematicSeries."""

    i_start: int
    i_end: int


@dataclass(frozen=True)
class Rejection:
    reason: str  # duration | robust_gate | sub_mild
    candidate: CandidateWindow
    detail: str = ""


@dataclass(frozen=True)
class BrakingEvent:
    track_id: int
    video_id: str
    t_start: float  # epoch seconds
    t_end: float
    duration: float
    a_bar: float  # |mean a| over the window
    a_robust: float  # |percentile-tail a| over the window
    peak_decel: float  # |min a|
    r_start: float  # m at t_start
    mean_position: tuple[float, float]  # (easting, northing), window average
    severity: Severity

    def __post_init__(self):
        if abs((self.t_end - self.t_start) - self.duration) > 1e-9:
            raise ValidationError("duration must equal t_end - t_start")
        if self.r_start < 0:
            raise ValidationError(f"r_start must be >= 0, got {self.r_start}")


def radial_distance(
    p: tuple[float, float], stop_bar: tuple[tuple[float, float], tuple[float, float]]
) -> float:
    """Euclidean distance from a world point to the stop-bar segment."""
    (ax, ay), (bx, by) = stop_bar
    px, py = p
    dx, dy = bx - ax, by - ay
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        raise ValidationError("stop bar endpoints must be distinct")
    t = ((px - ax) * dx + (py - ay) * dy) / seg_len2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def kinematics(
    traj: Trajectory, annotations: SiteAnnotations, dt: float = DEFAULT_GRID_DT
) -> KinematicSeries:
    """Distance/speed/acceleration series on a uniform dt grid.

    r is computed per trajectory point and linearly resampled; derivatives
    use central differences with second-order one-sided stencils at the
    ends, so constant-acceleration profiles differentiate exactly.
    """
    pts = traj.points
    if any(p.world is None for p in pts):
        raise ValidationError("kinematics requires world coordinates")
    t_raw = np.array([p.t for p in pts])
    if len(pts) < 5 or (t_raw[-1] - t_raw[0]) < 3 * dt:
        raise TooShortError(
            f"track {traj.track_id}: {len(pts)} points over "
            f"{t_raw[-1] - t_raw[0]:.3f} s is too short to differentiate"
        )
    r_raw = np.array([radial_distance(p.world, annotations.stop_bar) for p in pts])
    e_raw = np.array([p.world[0] for p in pts])
    n_raw = np.array([p.world[1] for p in pts])

    steps = int(math.floor((t_raw[-1] - t_raw[0]) / dt + 1e-9))
    t = t_raw[0] + dt * np.arange(steps + 1)
    r = np.interp(t, t_raw, r_raw)
    pos_e = np.interp(t, t_raw, e_raw)
    pos_n = np.interp(t, t_raw, n_raw)

    v = -np.gradient(r, dt, edge_order=2)
    a = np.gradient(v, dt, edge_order=2)
    return KinematicSeries(t=t, r=r, v=v, a=a, pos_e=pos_e, pos_n=pos_n)


def quantile(values: Sequence[float], q: float) -> float:
    """Linear interpolation between closest ranks at position q*(n-1).

    This is the one quantile definition used everywhere in the package;
    changing it would silently shift gate decisions and report tables.
    """
    if len(values) == 0:
        raise ValidationError("quantile of an empty sequence")
    if not (0.0 <= q <= 1.0):
        raise ValidationError(f"q must be in [0,1], got {q}")
    s = np.sort(np.asarray(values, dtype=np.float64))
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return float(s[lo] + (s[hi] - s[lo]) * frac)


def robust_decel(a_window: Sequence[float], percentile: float = 5.0) -> float:
    """Signed tail of the window's acceleration: its 5th percentile.

    The most-negative tail of the approach acceleration; callers gate on
    its magnitude.
    """
    return quantile(a_window, percentile / 100.0)


def detect_events(
    k: KinematicSeries,
    th: BrakingThresholds,
    merge_gap: float = DEFAULT_MERGE_GAP,
) -> list[CandidateWindow]:
    """Maximal runs with a < -a_trigger, merging near-adjacent runs.

    The separation between two runs is the time covered by the interior
    non-braking samples ((gap_samples - 1) * dt); runs separated by at most
    merge_gap are merged, so a single-sample dropout on the default grid
    cannot split one physical braking event in two.
    """
    braking = k.a < -th.a_trigger
    runs: list[list[int]] = []
    i = 0
    n = len(braking)
    while i < n:
        if braking[i]:
            j = i
            while j + 1 < n and braking[j + 1]:
                j += 1
            runs.append([i, j])
            i = j + 1
        else:
            i += 1
    if not runs:
        return []

    dt = float(np.median(np.diff(k.t)))
    merged = [runs[0]]
    for start, end in runs[1:]:
        gap = (start - merged[-1][1] - 1) * dt
        if gap <= merge_gap + 1e-12:
            merged[-1][1] = end
        else:
            merged.append([start, end])
    return [CandidateWindow(i_start=s, i_end=e) for s, e in merged]


def classify_severity(a_bar: float, th: BrakingThresholds) -> Severity | None:
    """Severity band for a mean deceleration magnitude; None below mild.

    Bounds are closed below and open above: mild [mild_lo, moderate_lo),
    moderate [moderate_lo, severe_lo), severe [severe_lo, inf).
    """
    if a_bar < 0:
        raise ValidationError(f"a_bar is a magnitude, got {a_bar}")
    if a_bar >= th.severe_lo:
        return Severity.SEVERE
    if a_bar >= th.moderate_lo:
        return Severity.MODERATE
    if a_bar >= th.mild_lo:
        return Severity.MILD
    return None


def validate_event(
    candidate: CandidateWindow,
    k: KinematicSeries,
    th: BrakingThresholds,
    track_id: int = 0,
    video_id: str = "",
) -> BrakingEvent | Rejection:
    """Apply the duration and robust-deceleration gates, then classify.

    The trigger gate holds by construction of detect_events. Windows whose
    mean magnitude falls below the mild band are rejected as sub_mild
    rather than materialized.
    """
    i0, i1 = candidate.i_start, candidate.i_end
    t_start, t_end = float(k.t[i0]), float(k.t[i1])
    duration = t_end - t_start
    if duration < th.min_duration - 1e-9:
        return Rejection(
            reason="duration",
            candidate=candidate,
            detail=f"{duration:.3f} s < {th.min_duration} s",
        )
    window = k.a[i0 : i1 + 1]
    tail = robust_decel(window, th.robust_percentile)
    a_robust = abs(tail)
    gate = th.robust_fraction * th.a_trigger
    if not (tail < 0 and a_robust >= gate):
        return Rejection(
            reason="robust_gate",
            candidate=candidate,
            detail=f"|p{th.robust_percentile:g}| = {a_robust:.4f} < {gate:.4f}",
        )
    a_bar = abs(float(np.mean(window)))
    severity = classify_severity(a_bar, th)
    if severity is None:
        return Rejection(
            reason="sub_mild",
            candidate=candidate,
            detail=f"a_bar = {a_bar:.4f} < {th.mild_lo}",
        )
    return BrakingEvent(
        track_id=track_id,
        video_id=video_id,
        t_start=t_start,
        t_end=t_end,
        duration=duration,
        a_bar=a_bar,
        a_robust=a_robust,
        peak_decel=abs(float(np.min(window))),
        r_start=float(k.r[i0]),
        mean_position=(float(np.mean(k.pos_e[i0 : i1 + 1])),
                       float(np.mean(k.pos_n[i0 : i1 + 1]))),
        severity=severity,
    )


@dataclass(frozen=True)
class TrackBrakingResult:
    events: tuple[BrakingEvent, ...]
    rejections: tuple[Rejection, ...]


def detect_braking(
    traj: Trajectory,
    annotations: SiteAnnotations,
    th: BrakingThresholds = BrakingThresholds(),
    dt: float = DEFAULT_GRID_DT,
    merge_gap: float = DEFAULT_MERGE_GAP,
) -> TrackBrakingResult:
    """Full per-trajectory chain: kinematics, candidates, gates, severity."""
    k = kinematics(traj, annotations, dt=dt)
    events: list[BrakingEvent] = []
    rejections: list[Rejection] = []
    for cand in detect_events(k, th, merge_gap=merge_gap):
        outcome = validate_event(
            cand, k, th, track_id=traj.track_id, video_id=traj.video_id
        )
        if isinstance(outcome, BrakingEvent):
            events.append(outcome)
        else:
            rejections.append(outcome)
    events.sort(key=lambda e: (e.t_start, e.track_id))
    return TrackBrakingResult(events=tuple(events), rejections=tuple(rejections))

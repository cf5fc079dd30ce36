"""Synthetic scenario generation with exact ground truth.

Everything here runs the measurement pipeline in reverse: a known
homography and geotransform, an analytically integrated approach profile,
and detections synthesized by projecting the true ground point into the
camera. The generators are pure functions of their seeds (counter-based
PRNG), so every test fixture is reproducible bit-for-bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .correspond import OrthoPoint, SiteAnnotations
from .errors import ValidationError
from .homog import Homography, project_inverse
from .ortho import GeoTransform, world_to_pixel
from .tracks import VideoMeta

# matrix entries are snapped to this grid so small rational multiples of a
# generated matrix stay exactly representable
DYADIC_STEP = 2.0**-20

DEFAULT_START_EPOCH = datetime(2025, 6, 2, 8, 0, tzinfo=timezone.utc).timestamp()

DEFAULT_GEOTRANSFORM = GeoTransform(
    origin_x=0.0, origin_y=0.0, scale_x=0.05, scale_y=0.05
)


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=stream << 128))


def gen_matrix(seed: int) -> np.ndarray:
    """Raw well-conditioned camera-to-ortho matrix with h33 = 1.

    Entries are dyadic rationals (multiples of 2^-20). Seed 0 is reserved
    for the identity map.
    """
    if seed == 0:
        return np.eye(3)
    rng = _rng(seed)
    theta = rng.uniform(-0.26, 0.26)
    scale = rng.uniform(0.25, 0.5)
    tx = rng.uniform(100.0, 400.0)
    ty = rng.uniform(100.0, 400.0)
    p1 = rng.uniform(-2e-4, 2e-4)
    p2 = rng.uniform(-2e-4, 2e-4)
    m = np.array([
        [scale * math.cos(theta), -scale * math.sin(theta), tx],
        [scale * math.sin(theta), scale * math.cos(theta), ty],
        [p1, p2, 1.0],
    ])
    return np.round(m / DYADIC_STEP) * DYADIC_STEP


def gen_homography(seed: int) -> Homography:
    """Random ground-plane map with bounded perspective terms.

    On the h33 = 1 form the perspective entries satisfy |h31|, |h32|
    <= 2e-4 + 2^-20, comfortably inside the 1e-3 conditioning bound.
    """
    return Homography.from_matrix(gen_matrix(seed))


@dataclass(frozen=True)
class ApproachProfile:
    """Constant speed, then constant deceleration starting at brake_at_r.

    The vehicle travels along the approach normal toward the stop bar,
    offset laterally by lane_offset. cruise_s seconds of steady approach
    precede the braking onset; hold_s seconds of standstill follow it.
    """

    v0: float  # m/s
    a_brake: float  # m/s^2, >= 0 (0 = never brakes)
    brake_at_r: float  # m
    stop_bar: tuple[tuple[float, float], tuple[float, float]] = ((0.0, -6.0), (0.0, 6.0))
    lane_offset: float = 2.0  # m, along the bar direction
    cruise_s: float = 1.0
    hold_s: float = 2.0

    def __post_init__(self):
        if self.v0 <= 0:
            raise ValidationError(f"v0 must be > 0, got {self.v0}")
        if self.a_brake < 0:
            raise ValidationError(f"a_brake must be >= 0, got {self.a_brake}")
        if self.brake_at_r <= 0:
            raise ValidationError(f"brake_at_r must be > 0, got {self.brake_at_r}")


@dataclass(frozen=True)
class ApproachScenario:
    detections: tuple[str, ...]  # NDJSON lines, one per frame
    meta: VideoMeta
    annotations: SiteAnnotations
    homography: Homography
    geotransform: GeoTransform
    # analytic truth sampled at frame times (absolute epoch seconds)
    truth_t: np.ndarray
    truth_r: np.ndarray
    truth_v: np.ndarray
    truth_a: np.ndarray
    # expected event quantities (None when a_brake == 0)
    expected_a_bar: float | None
    expected_r_start: float | None
    expected_t_brake: float | None  # epoch seconds of braking onset
    flagged: bool  # profile crosses the stop bar before braking completes


def _profile_state(profile: ApproachProfile, t: float) -> tuple[float, float, float]:
    """(r, v, a) at scenario-relative time t for the 3-phase profile."""
    r0 = profile.brake_at_r + profile.v0 * profile.cruise_s
    t1 = profile.cruise_s
    if profile.a_brake == 0.0:
        r = r0 - profile.v0 * t
        return max(r, 0.0), profile.v0, 0.0
    tau_stop = profile.v0 / profile.a_brake
    if t < t1:
        return r0 - profile.v0 * t, profile.v0, 0.0
    tau = t - t1
    if tau < tau_stop:
        r = profile.brake_at_r - profile.v0 * tau + 0.5 * profile.a_brake * tau * tau
        return r, profile.v0 - profile.a_brake * tau, -profile.a_brake
    r_stop = profile.brake_at_r - profile.v0 * tau_stop + 0.5 * profile.a_brake * tau_stop**2
    return r_stop, 0.0, 0.0


def _bar_frame(profile: ApproachProfile) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(midpoint, along-bar unit, approach unit) of the stop bar."""
    (ax, ay), (bx, by) = profile.stop_bar
    mid = np.array([(ax + bx) / 2.0, (ay + by) / 2.0])
    along = np.array([bx - ax, by - ay])
    along = along / np.linalg.norm(along)
    # approach direction: bar normal, rotated so r grows away from the bar
    normal = np.array([along[1], -along[0]])
    return mid, along, normal


def gen_approach(
    profile: ApproachProfile,
    fps: float,
    noise_px: float,
    h: Homography,
    gt: GeoTransform = DEFAULT_GEOTRANSFORM,
    seed: int = 1,
    video_id: str = "synth-approach",
    start_time: float = DEFAULT_START_EPOCH,
    bbox_base: tuple[float, float] = (60.0, 40.0),
) -> ApproachScenario:
    """Synthesize one vehicle approach as detections plus analytic truth.

    World positions follow the profile; each frame's ground point goes
    world -> ortho pixels -> camera (through the inverse homography), gets
    Gaussian pixel noise, and is wrapped in a bbox whose bottom-center is
    exactly that point. Bbox size scales with the projective depth proxy
    1/w so nearer boxes look bigger; only the bottom-center is consumed.
    """
    if fps <= 0:
        raise ValidationError(f"fps must be > 0, got {fps}")
    if noise_px < 0:
        raise ValidationError(f"noise_px must be >= 0, got {noise_px}")

    mid, along, normal = _bar_frame(profile)
    if profile.a_brake > 0:
        tau_stop = profile.v0 / profile.a_brake
        r_stop = profile.brake_at_r - profile.v0**2 / (2.0 * profile.a_brake)
        total_s = profile.cruise_s + tau_stop + profile.hold_s
        flagged = r_stop < 0
    else:
        r0 = profile.brake_at_r + profile.v0 * profile.cruise_s
        total_s = r0 / profile.v0
        flagged = False

    n_frames = int(math.floor(total_s * fps)) + 1
    rng = _rng(seed)
    hm = h.h  # canonical matrix; w = row3 . (u, v, 1)

    lines: list[str] = []
    truth = np.zeros((n_frames, 4))
    for k in range(n_frames):
        t_rel = k / fps
        r, v, a = _profile_state(profile, t_rel)
        pos = mid + r * normal + profile.lane_offset * along
        ox, oy = world_to_pixel(gt, pos[0], pos[1])
        cam = project_inverse(h, OrthoPoint(ox, oy))
        u = cam.u + (rng.normal(0.0, noise_px) if noise_px > 0 else 0.0)
        v_px = cam.v + (rng.normal(0.0, noise_px) if noise_px > 0 else 0.0)
        w = hm[2, 0] * u + hm[2, 1] * v_px + hm[2, 2]
        depth = 1.0 / max(abs(w), 1e-6)
        bw = bbox_base[0] * depth
        bh = bbox_base[1] * depth
        lines.append(json.dumps({
            "video_id": video_id,
            "frame": k,
            "track_id": 1,
            "class": "car",
            "bbox": [u - bw / 2.0, v_px - bh, bw, bh],
            "conf": 0.9,
        }))
        truth[k] = (start_time + t_rel, r, v, a)

    meta = VideoMeta(
        video_id=video_id,
        start_time=start_time,
        fps=fps,
        filename=f"{video_id}.mp4",
    )
    # median runs along the approach so lane sides are well defined
    median = (
        (float(mid[0]), float(mid[1])),
        (float(mid[0] + 120.0 * normal[0]), float(mid[1] + 120.0 * normal[1])),
    )
    annotations = SiteAnnotations(
        stop_bar=profile.stop_bar, median_line=median, analysis_side="both"
    )
    braking = profile.a_brake > 0
    return ApproachScenario(
        detections=tuple(lines),
        meta=meta,
        annotations=annotations,
        homography=h,
        geotransform=gt,
        truth_t=truth[:, 0],
        truth_r=truth[:, 1],
        truth_v=truth[:, 2],
        truth_a=truth[:, 3],
        expected_a_bar=profile.a_brake if braking else None,
        expected_r_start=profile.brake_at_r if braking else None,
        expected_t_brake=start_time + profile.cruise_s if braking else None,
        flagged=flagged,
    )


@dataclass(frozen=True)
class EventCorpus:
    """Seeded braking-event corpus with independently tallied ground truth."""

    events: tuple  # BrakingEvent, import-light on purpose
    window_start: float
    window_end: float
    n_days: int
    # ground truth tallied from the generation plan, not from the events
    truth_hourly: dict  # (hour, severity value) -> mean daily count
    truth_r_starts: tuple[float, ...]  # ascending


def gen_event_corpus(
    seed: int,
    n_events: int = 200,
    n_days: int = 2,
    hours: tuple[int, ...] = tuple(range(7, 19)),
    window_start: float = DEFAULT_START_EPOCH - 8 * 3600.0,
) -> EventCorpus:
    """Plan and materialize a braking-event population with known tallies.

    The per-(day, hour, severity) counts are planned first with a
    counter-based RNG, then exactly that many events are instantiated, so
    the hourly ground truth is an integer bookkeeping fact rather than a
    re-measurement of the output.
    """
    from .braking import BrakingEvent, Severity  # deferred: avoid cycle in docs

    if n_events < 1:
        raise ValidationError("corpus needs at least 1 event")
    rng = _rng(seed)
    severities = (Severity.MILD, Severity.MODERATE, Severity.SEVERE)
    bands = {
        Severity.MILD: (1.4715, 2.4525),
        Severity.MODERATE: (2.4525, 3.924),
        Severity.SEVERE: (3.924, 6.5),
    }
    weights = np.array([0.55, 0.33, 0.12])

    # plan: how many events in each (day, hour, severity) cell
    plan: dict[tuple[int, int, object], int] = {}
    for _ in range(n_events):
        day = int(rng.integers(0, n_days))
        hour = int(hours[rng.integers(0, len(hours))])
        sev = severities[int(rng.choice(3, p=weights))]
        plan[(day, hour, sev)] = plan.get((day, hour, sev), 0) + 1

    # every observed (hour, severity) cell, zeros included: the window spans
    # whole days, so all 24 hour slots are observed n_days times
    truth_hourly: dict[tuple[int, str], float] = {
        (hour, sev.value): 0.0 for hour in range(24) for sev in severities
    }
    for (_, hour, sev), count in plan.items():
        truth_hourly[(hour, sev.value)] += count
    for key in truth_hourly:
        truth_hourly[key] /= n_days

    events = []
    r_starts = []
    serial = 0
    for (day, hour, sev) in sorted(plan, key=lambda c: (c[0], c[1], c[2].value)):
        for _ in range(plan[(day, hour, sev)]):
            lo, hi = bands[sev]
            a_bar = float(rng.uniform(lo, min(hi, lo + 0.98 * (hi - lo))))
            r_start = float(rng.uniform(2.0, 60.0))
            offset = float(rng.uniform(0.0, 3599.0))
            t_start = window_start + day * 86400.0 + hour * 3600.0 + offset
            t_end = t_start + float(rng.uniform(0.3, 2.0))
            # duration re-derived so it matches t_end - t_start at epoch scale
            events.append(BrakingEvent(
                track_id=serial,
                video_id=f"corpus-day{day}",
                t_start=t_start,
                t_end=t_end,
                duration=t_end - t_start,
                a_bar=a_bar,
                a_robust=a_bar * 1.05,
                peak_decel=a_bar * 1.4,
                r_start=r_start,
                mean_position=(r_start, 2.0),
                severity=sev,
            ))
            r_starts.append(r_start)
            serial += 1

    return EventCorpus(
        events=tuple(events),
        window_start=window_start,
        window_end=window_start + n_days * 86400.0,
        n_days=n_days,
        truth_hourly=truth_hourly,
        truth_r_starts=tuple(sorted(r_starts)),
    )

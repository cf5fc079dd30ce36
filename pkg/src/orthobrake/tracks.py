"""Detection ingestion, trajectory assembly, smoothing, and world projection.

The unit of work is one video: NDJSON detections plus a metadata sidecar.
Detections are grouped into per-vehicle tracks, the bbox ground contact
point is smoothed in camera space, frame indices become absolute times, and
the homography plus geotransform lift each point into metric world
coordinates.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Iterable, Sequence

from .correspond import CameraPoint, OrthoPoint
from .errors import HorizonError, ParseError, TrajectoryRejected, ValidationError
from .homog import Homography, project
from .ortho import GeoTransform, pixel_to_world

log = logging.getLogger(__name__)

DEFAULT_MIN_TRACK_LEN = 10
DEFAULT_VEHICLE_CLASSES = frozenset({"car", "truck", "bus", "motorcycle"})
DEFAULT_EMA_ALPHA = 0.3

# stationary clamp defaults: dwell this long within this radius to anchor
DEFAULT_CLAMP_WINDOW_S = 2.0
DEFAULT_CLAMP_RADIUS_M = 0.5


@dataclass(frozen=True)
class Detection:
    video_id: str
    frame_idx: int
    track_id: int
    class_label: str
    bbox: tuple[float, float, float, float]  # (x, y, w, h), top-left convention
    confidence: float

    def __post_init__(self):
        x, y, w, h = self.bbox
        if not (w > 0 and h > 0):
            raise ValidationError(f"bbox must have positive size, got {self.bbox}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence must be in [0,1], got {self.confidence}")
        if self.frame_idx < 0:
            raise ValidationError(f"frame_idx must be >= 0, got {self.frame_idx}")


@dataclass(frozen=True)
class TrackPoint:
    t: float  # absolute epoch seconds once anchored; frame-index placeholder before
    frame_idx: int
    cam: CameraPoint
    ortho: OrthoPoint | None = None
    world: tuple[float, float] | None = None


@dataclass(frozen=True)
class Trajectory:
    track_id: int
    video_id: str
    class_label: str
    points: tuple[TrackPoint, ...]
    smoothed: bool = False

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValidationError(
                f"trajectory needs at least 2 points, got {len(self.points)}"
            )
        ts = [p.t for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("trajectory timestamps must be strictly increasing")


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    start_time: float  # epoch seconds
    fps: float
    filename: str

    def __post_init__(self):
        if not (self.fps > 0):
            raise ValidationError(f"fps must be > 0, got {self.fps}")


@dataclass(frozen=True)
class ParseIssue:
    line_no: int  # 1-based
    reason: str


def parse_meta(doc: dict | str | bytes) -> VideoMeta:
    """Parse the video metadata sidecar; start_time is ISO-8601 on the wire."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"metadata sidecar is not valid JSON: {exc}") from exc
    try:
        raw_start = doc["start_time"]
        if isinstance(raw_start, str):
            start = datetime.fromisoformat(raw_start.replace("Z", "+00:00"))
            if start.tzinfo is None:
                start = start.replace(tzinfo=timezone.utc)
            start_time = start.timestamp()
        else:
            start_time = float(raw_start)
        return VideoMeta(
            video_id=str(doc["video_id"]),
            start_time=start_time,
            fps=float(doc["fps"]),
            filename=str(doc["filename"]),
        )
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise ParseError(f"malformed metadata sidecar: {exc}") from exc


def _detection_from_obj(obj: dict) -> Detection:
    bbox = obj["bbox"]
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise ValueError(f"bbox must be a 4-element array, got {bbox!r}")
    return Detection(
        video_id=str(obj["video_id"]),
        frame_idx=int(obj["frame"]),
        track_id=int(obj["track_id"]),
        class_label=str(obj["class"]),
        bbox=tuple(float(v) for v in bbox),
        confidence=float(obj["conf"]),
    )


def parse_detections(
    stream: Iterable[str], strict: bool = False
) -> tuple[list[Detection], list[ParseIssue]]:
    """Parse NDJSON detection lines; blank lines are skipped.

    Invalid lines are collected as ParseIssue with their 1-based line
    number; strict mode raises on the first one instead.
    """
    detections: list[Detection] = []
    issues: list[ParseIssue] = []
    for line_no, line in enumerate(stream, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            detections.append(_detection_from_obj(obj))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                ValidationError) as exc:
            if strict:
                raise ParseError(f"line {line_no}: {exc}") from exc
            issues.append(ParseIssue(line_no=line_no, reason=str(exc)))
    return detections, issues


def ground_point(d: Detection) -> CameraPoint:
    """Bottom-center of the bbox: the wheel contact point on the ground plane."""
    x, y, w, h = d.bbox
    return CameraPoint(x + w / 2.0, y + h)


def assemble_tracks(
    detections: Sequence[Detection],
    min_len: int = DEFAULT_MIN_TRACK_LEN,
    allowed_classes: frozenset[str] = DEFAULT_VEHICLE_CLASSES,
) -> list[Trajectory]:
    """Group detections into per-track trajectories in frame order.

    Tracks shorter than min_len or outside allowed_classes are dropped.
    Duplicate (track_id, frame_idx) detections keep the highest confidence.
    Timestamps are provisional frame indices until anchor_timestamps runs.
    """
    if detections:
        vids = {d.video_id for d in detections}
        if len(vids) > 1:
            raise ValidationError(f"detections span multiple videos: {sorted(vids)}")

    by_track: dict[int, dict[int, Detection]] = {}
    for d in detections:
        frames = by_track.setdefault(d.track_id, {})
        prev = frames.get(d.frame_idx)
        if prev is not None:
            log.warning(
                "duplicate detection for track %d frame %d; keeping higher confidence",
                d.track_id, d.frame_idx,
            )
            if d.confidence <= prev.confidence:
                continue
        frames[d.frame_idx] = d

    out: list[Trajectory] = []
    for track_id in sorted(by_track):
        frames = by_track[track_id]
        dets = [frames[i] for i in sorted(frames)]
        if len(dets) < min_len:
            continue
        # majority class over the track decides the label
        votes: dict[str, int] = {}
        for d in dets:
            votes[d.class_label] = votes.get(d.class_label, 0) + 1
        label = max(sorted(votes), key=lambda c: votes[c])
        if label not in allowed_classes:
            continue
        points = tuple(
            TrackPoint(t=float(d.frame_idx), frame_idx=d.frame_idx, cam=ground_point(d))
            for d in dets
        )
        out.append(Trajectory(
            track_id=track_id,
            video_id=dets[0].video_id,
            class_label=label,
            points=points,
        ))
    return out


def ema_smooth(
    series: Sequence[tuple[float, float]], alpha: float
) -> list[tuple[float, float]]:
    """First-order recursive smoother s_k = alpha*v_k + (1-alpha)*s_{k-1}.

    s_0 = v_0; timestamps pass through unchanged.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
    out: list[tuple[float, float]] = []
    s = None
    for t, v in series:
        s = v if s is None else alpha * v + (1.0 - alpha) * s
        out.append((t, s))
    return out


def smooth_trajectory(traj: Trajectory, alpha: float = DEFAULT_EMA_ALPHA) -> Trajectory:
    """Apply EMA to camera-space u and v independently."""
    us = ema_smooth([(p.t, p.cam.u) for p in traj.points], alpha)
    vs = ema_smooth([(p.t, p.cam.v) for p in traj.points], alpha)
    points = tuple(
        replace(p, cam=CameraPoint(u[1], v[1]))
        for p, u, v in zip(traj.points, us, vs)
    )
    return replace(traj, points=points, smoothed=True)


def anchor_timestamps(frames: Sequence[int], meta: VideoMeta) -> list[float]:
    """Absolute time of each frame: start_time + frame_idx / fps."""
    return [meta.start_time + f / meta.fps for f in frames]


def timestamp_trajectory(traj: Trajectory, meta: VideoMeta) -> Trajectory:
    times = anchor_timestamps([p.frame_idx for p in traj.points], meta)
    points = tuple(replace(p, t=t) for p, t in zip(traj.points, times))
    return replace(traj, points=points)


def to_world(traj: Trajectory, h: Homography, gt: GeoTransform) -> Trajectory:
    """Project every point to the ortho frame and then to world meters.

    Points whose projection crosses the horizon are dropped (the count is
    logged); more than 50% dropped rejects the whole trajectory.
    """
    kept: list[TrackPoint] = []
    dropped = 0
    for p in traj.points:
        try:
            ortho = project(h, p.cam)
        except HorizonError:
            dropped += 1
            continue
        world = pixel_to_world(gt, ortho.x, ortho.y)
        kept.append(replace(p, ortho=ortho, world=world))
    if dropped:
        log.warning(
            "track %s/%d: dropped %d of %d points at the horizon",
            traj.video_id, traj.track_id, dropped, len(traj.points),
        )
    if dropped * 2 > len(traj.points):
        raise TrajectoryRejected(
            f"track {traj.track_id}: {dropped} of {len(traj.points)} points "
            "projected to the horizon"
        )
    return replace(traj, points=tuple(kept))


def stationary_clamp(
    traj: Trajectory,
    window: float = DEFAULT_CLAMP_WINDOW_S,
    radius: float = DEFAULT_CLAMP_RADIUS_M,
) -> Trajectory:
    """Anchor dwell episodes so occlusion-induced box drift reads as stopped.

    Scanning forward, any maximal run of points that stays within `radius`
    meters of its first point and lasts at least `window` seconds is
    replaced by that first (anchor) point. Moving stretches are untouched.
    """
    if any(p.world is None for p in traj.points):
        raise ValidationError("stationary clamp requires world coordinates")
    pts = list(traj.points)
    out: list[TrackPoint] = []
    i = 0
    while i < len(pts):
        anchor = pts[i]
        j = i
        while j + 1 < len(pts):
            nxt = pts[j + 1]
            dx = nxt.world[0] - anchor.world[0]
            dy = nxt.world[1] - anchor.world[1]
            if dx * dx + dy * dy > radius * radius:
                break
            j += 1
        if j > i and pts[j].t - anchor.t >= window:
            out.append(anchor)
            out.extend(
                replace(p, world=anchor.world, ortho=anchor.ortho, cam=anchor.cam)
                for p in pts[i + 1 : j + 1]
            )
            i = j + 1
        else:
            out.append(anchor)
            i += 1
    return replace(traj, points=tuple(out))

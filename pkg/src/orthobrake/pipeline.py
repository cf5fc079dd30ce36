"""End-to-end composition: detections in, stored trajectories and events out.

The command line and the HTTP service both route through these functions,
so the two front ends produce byte-identical store content and exports for
identical inputs. Site configuration lives as a plain JSON document in the
sites table; the helpers here translate it to and from the typed objects
the lower layers use.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, time as dtime, timedelta, timezone

import numpy as np

from .braking import (
    BrakingEvent,
    BrakingThresholds,
    Severity,
    detect_braking,
)
from .correspond import (
    CameraPoint,
    SiteAnnotations,
    annotations_from_doc,
    side_of_median,
)
from .errors import ConfigError, ParseError, TooShortError, TrajectoryRejected
from .homog import Homography, HomographyRecord, select_homography
from .ortho import GeoTransform
from .store import Store, iso_utc
from .tracks import (
    DEFAULT_CLAMP_RADIUS_M,
    DEFAULT_CLAMP_WINDOW_S,
    DEFAULT_EMA_ALPHA,
    DEFAULT_MIN_TRACK_LEN,
    DEFAULT_VEHICLE_CLASSES,
    TrackPoint,
    Trajectory,
    assemble_tracks,
    parse_detections,
    parse_meta,
    smooth_trajectory,
    stationary_clamp,
    timestamp_trajectory,
    to_world,
)
from . import analytics
from .analytics import DistanceBins, ObservationWindow

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IngestSettings:
    """Everything the trajectory and event stages need besides site config."""

    min_track_len: int = DEFAULT_MIN_TRACK_LEN
    allowed_classes: frozenset = DEFAULT_VEHICLE_CLASSES
    ema_alpha: float = DEFAULT_EMA_ALPHA
    clamp_window_s: float = DEFAULT_CLAMP_WINDOW_S
    clamp_radius_m: float = DEFAULT_CLAMP_RADIUS_M
    grid_dt: float = 0.1
    merge_gap: float = 0.1
    thresholds: BrakingThresholds = field(default_factory=BrakingThresholds)


# -- site document translation -----------------------------------------------


def geotransform_to_doc(gt: GeoTransform) -> dict:
    return {
        "origin_x": gt.origin_x,
        "origin_y": gt.origin_y,
        "scale_x": gt.scale_x,
        "scale_y": gt.scale_y,
        "crs_id": gt.crs_id,
        "crs_units": gt.crs_units,
    }


def geotransform_from_doc(doc: dict) -> GeoTransform:
    try:
        return GeoTransform(
            origin_x=float(doc["origin_x"]),
            origin_y=float(doc["origin_y"]),
            scale_x=float(doc["scale_x"]),
            scale_y=float(doc["scale_y"]),
            crs_id=str(doc.get("crs_id", "EPSG:6438")),
            crs_units=str(doc.get("crs_units", "meters")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed geotransform document: {exc}") from exc


def record_to_doc(rec: HomographyRecord) -> dict:
    return {
        "h": rec.homography.to_list(),
        "valid_from": rec.valid_from,
        "valid_to": rec.valid_to,
        "filename_pattern": rec.filename_pattern,
        "site_id": rec.site_id,
        "created_at": rec.created_at,
        "source_pairs_sha256": rec.source_pairs_sha256,
        "label": rec.label,
    }


def record_from_doc(doc: dict) -> HomographyRecord:
    try:
        flat = [float(v) for v in doc["h"]]
        if len(flat) != 9:
            raise ValueError(f"expected 9 matrix entries, got {len(flat)}")
        return HomographyRecord(
            homography=Homography.from_matrix(np.array(flat).reshape(3, 3)),
            valid_from=doc.get("valid_from"),
            valid_to=doc.get("valid_to"),
            filename_pattern=doc.get("filename_pattern"),
            site_id=str(doc.get("site_id", "")),
            created_at=str(doc.get("created_at", "")),
            source_pairs_sha256=str(doc.get("source_pairs_sha256", "")),
            label=str(doc.get("label", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed homography record: {exc}") from exc


def site_geotransform(site: dict) -> GeoTransform:
    doc = site.get("geotransform")
    if not doc:
        raise ConfigError(f"site {site.get('site_id')!r} has no geotransform")
    return geotransform_from_doc(doc)


def site_annotations(site: dict) -> SiteAnnotations:
    doc = site.get("annotations")
    if not doc:
        raise ConfigError(f"site {site.get('site_id')!r} has no annotations")
    return annotations_from_doc(doc)


def site_registry(site: dict) -> list[HomographyRecord]:
    return [record_from_doc(d) for d in site.get("homographies", [])]


# -- store row shapes ----------------------------------------------------------


def trajectory_row(site_id: str, traj: Trajectory) -> dict:
    """Columnar world-plane form; camera coordinates never leave the process."""
    pts = traj.points
    return {
        "site_id": site_id,
        "video_id": traj.video_id,
        "track_id": traj.track_id,
        "class": traj.class_label,
        "point_count": len(pts),
        "t_first": pts[0].t,
        "t_last": pts[-1].t,
        "points_blob": {
            "t": [p.t for p in pts],
            "x": [p.world[0] for p in pts],
            "y": [p.world[1] for p in pts],
        },
    }


def event_row(site_id: str, ev: BrakingEvent) -> dict:
    return {
        "site_id": site_id,
        "video_id": ev.video_id,
        "track_id": ev.track_id,
        "t_start": ev.t_start,
        "t_end": ev.t_end,
        "duration": ev.duration,
        "a_bar": ev.a_bar,
        "a_robust": ev.a_robust,
        "peak_decel": ev.peak_decel,
        "r_start": ev.r_start,
        "mean_easting": ev.mean_position[0],
        "mean_northing": ev.mean_position[1],
        "severity": ev.severity.value,
        "t_start_iso": iso_utc(ev.t_start),
        "t_end_iso": iso_utc(ev.t_end),
    }


def trajectory_from_row(row: dict) -> Trajectory:
    """Rebuild the world-plane trajectory a stored row describes.

    Camera coordinates are not persisted, so points carry a zero camera
    placeholder; everything downstream of storage works in world meters.
    """
    blob = row["points_blob"]
    points = tuple(
        TrackPoint(
            t=float(t),
            frame_idx=i,
            cam=CameraPoint(0.0, 0.0),
            world=(float(x), float(y)),
        )
        for i, (t, x, y) in enumerate(zip(blob["t"], blob["x"], blob["y"]))
    )
    return Trajectory(
        track_id=int(row["track_id"]),
        video_id=str(row["video_id"]),
        class_label=str(row["class"]),
        points=points,
        smoothed=True,
    )


def event_from_row(row: dict) -> BrakingEvent:
    return BrakingEvent(
        track_id=int(row["track_id"]),
        video_id=str(row["video_id"]),
        t_start=float(row["t_start"]),
        t_end=float(row["t_end"]),
        duration=float(row["duration"]),
        a_bar=float(row["a_bar"]),
        a_robust=float(row["a_robust"]),
        peak_decel=float(row["peak_decel"]),
        r_start=float(row["r_start"]),
        mean_position=(float(row["mean_easting"]), float(row["mean_northing"])),
        severity=Severity(row["severity"]),
    )


# -- ingestion ------------------------------------------------------------------


@dataclass(frozen=True)
class IngestSummary:
    video_id: str
    detections: int
    tracks_seen: int
    tracks_assembled: int
    rejected_horizon: int
    skipped_side: int
    too_short: int
    trajectories: int
    events: int
    events_by_severity: dict
    rejections_by_reason: dict

    def to_doc(self) -> dict:
        return {
            "video_id": self.video_id,
            "detections": self.detections,
            "tracks_seen": self.tracks_seen,
            "tracks_assembled": self.tracks_assembled,
            "rejected_horizon": self.rejected_horizon,
            "skipped_side": self.skipped_side,
            "too_short": self.too_short,
            "trajectories": self.trajectories,
            "events": self.events,
            "events_by_severity": self.events_by_severity,
            "rejections_by_reason": self.rejections_by_reason,
        }


@dataclass(frozen=True)
class _ComputedVideo:
    summary: IngestSummary
    traj_rows: tuple
    event_rows: tuple


def _mean_world(traj: Trajectory) -> tuple[float, float]:
    xs = [p.world[0] for p in traj.points]
    ys = [p.world[1] for p in traj.points]
    return sum(xs) / len(xs), sum(ys) / len(ys)


def _compute_video(
    site: dict, lines, meta_doc, settings: IngestSettings
) -> _ComputedVideo:
    """Pure computation half of an ingest: no store access, thread-safe."""
    detections, issues = parse_detections(lines)
    if issues:
        listing = "; ".join(f"line {i.line_no}: {i.reason}" for i in issues[:20])
        raise ParseError(
            f"{len(issues)} detection line(s) failed to parse: {listing}"
        )
    meta = parse_meta(meta_doc)
    gt = site_geotransform(site)
    ann = site_annotations(site)
    offset = float(site.get("utc_offset_hours", 0.0))
    h = select_homography(site_registry(site), meta.start_time, meta.filename, offset)

    assembled = assemble_tracks(
        detections, min_len=settings.min_track_len,
        allowed_classes=settings.allowed_classes,
    )
    site_id = str(site["site_id"])
    rejected_horizon = 0
    skipped_side = 0
    too_short = 0
    traj_rows = []
    ev_rows = []
    severities: dict[str, int] = {}
    reasons: dict[str, int] = {}
    for traj in assembled:
        traj = timestamp_trajectory(smooth_trajectory(traj, settings.ema_alpha), meta)
        try:
            traj = to_world(traj, h, gt)
        except TrajectoryRejected as exc:
            log.warning("track %d rejected: %s", traj.track_id, exc)
            rejected_horizon += 1
            continue
        traj = stationary_clamp(
            traj, window=settings.clamp_window_s, radius=settings.clamp_radius_m
        )
        if ann.analysis_side in ("left", "right"):
            side = side_of_median(ann, *_mean_world(traj))
            if side != ann.analysis_side:
                skipped_side += 1
                continue
        try:
            result = detect_braking(
                traj, ann, settings.thresholds,
                dt=settings.grid_dt, merge_gap=settings.merge_gap,
            )
        except TooShortError:
            too_short += 1
            continue
        traj_rows.append(trajectory_row(site_id, traj))
        for ev in result.events:
            ev_rows.append(event_row(site_id, ev))
            severities[ev.severity.value] = severities.get(ev.severity.value, 0) + 1
        for rej in result.rejections:
            reasons[rej.reason] = reasons.get(rej.reason, 0) + 1

    summary = IngestSummary(
        video_id=meta.video_id,
        detections=len(detections),
        tracks_seen=len({d.track_id for d in detections}),
        tracks_assembled=len(assembled),
        rejected_horizon=rejected_horizon,
        skipped_side=skipped_side,
        too_short=too_short,
        trajectories=len(traj_rows),
        events=len(ev_rows),
        events_by_severity=dict(sorted(severities.items())),
        rejections_by_reason=dict(sorted(reasons.items())),
    )
    return _ComputedVideo(summary, tuple(traj_rows), tuple(ev_rows))


def _commit_video(store: Store, site_id: str, computed: _ComputedVideo) -> None:
    """Replace the video's stored rows with the freshly computed ones."""
    vid = computed.summary.video_id
    store.delete_trajectories(site_id, vid)
    store.delete_events(site_id, vid)
    if computed.traj_rows:
        store.put_trajectories(list(computed.traj_rows))
    if computed.event_rows:
        store.put_events(list(computed.event_rows))


def ingest_video(
    store: Store,
    site: dict,
    lines,
    meta_doc,
    settings: IngestSettings = IngestSettings(),
) -> IngestSummary:
    """Parse, track, project, and detect one video, then store the results.

    Any malformed detection line aborts the whole ingest before anything is
    written. Re-ingesting the same video replaces its previous rows.
    """
    computed = _compute_video(site, list(lines), meta_doc, settings)
    _commit_video(store, str(site["site_id"]), computed)
    return computed.summary


def ingest_many(
    store: Store,
    site: dict,
    jobs: "list[tuple[list, object]]",
    settings: IngestSettings = IngestSettings(),
    parallel: int = 1,
) -> "list[IngestSummary]":
    """Ingest several (lines, meta) jobs, optionally computing in parallel.

    Compute runs per-video in a thread pool; commits are serialized in
    video_id order, so results are independent of worker count.
    """
    if parallel < 1:
        raise ConfigError(f"parallel must be >= 1, got {parallel}")
    if parallel == 1:
        computed = [_compute_video(site, list(l), m, settings) for l, m in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            computed = list(pool.map(
                lambda job: _compute_video(site, list(job[0]), job[1], settings),
                jobs,
            ))
    computed.sort(key=lambda c: c.summary.video_id)
    site_id = str(site["site_id"])
    for c in computed:
        _commit_video(store, site_id, c)
    return [c.summary for c in computed]


# -- re-detection over stored trajectories ---------------------------------------


def detect_site(
    store: Store,
    site: dict,
    settings: IngestSettings = IngestSettings(),
    video_id: str | None = None,
) -> dict:
    """Recompute braking events from stored trajectories (new thresholds,
    say) without touching the trajectory rows."""
    ann = site_annotations(site)
    site_id = str(site["site_id"])
    rows = store.query_trajectories(site_id, video_id)
    ev_rows = []
    reasons: dict[str, int] = {}
    too_short = 0
    for row in rows:
        traj = trajectory_from_row(row)
        try:
            result = detect_braking(
                traj, ann, settings.thresholds,
                dt=settings.grid_dt, merge_gap=settings.merge_gap,
            )
        except TooShortError:
            too_short += 1
            continue
        for ev in result.events:
            ev_rows.append(event_row(site_id, ev))
        for rej in result.rejections:
            reasons[rej.reason] = reasons.get(rej.reason, 0) + 1
    store.delete_events(site_id, video_id)
    if ev_rows:
        store.put_events(ev_rows)
    return {
        "trajectories": len(rows),
        "events": len(ev_rows),
        "too_short": too_short,
        "rejections_by_reason": dict(sorted(reasons.items())),
    }


# -- reporting --------------------------------------------------------------------


def derive_window(
    events: "list[BrakingEvent]", utc_offset_hours: float
) -> ObservationWindow:
    """Observation window implied by the data: local-midnight aligned span
    covering every event. Used when the site doesn't pin one explicitly."""
    if not events:
        raise ConfigError("cannot derive an observation window without events")
    t_lo = min(ev.t_start for ev in events)
    t_hi = max(ev.t_end for ev in events)
    shift = timedelta(hours=utc_offset_hours)

    def _local(t: float) -> datetime:
        return (datetime.fromtimestamp(t, tz=timezone.utc) + shift).replace(tzinfo=None)

    lo_local = _local(t_lo)
    day_start = datetime.combine(lo_local.date(), dtime(0))
    start_epoch = t_lo - (lo_local - day_start).total_seconds()
    hi_local = _local(t_hi)
    day_end = datetime.combine(hi_local.date(), dtime(0)) + timedelta(days=1)
    end_epoch = t_hi + (day_end - hi_local).total_seconds()
    return ObservationWindow(start_epoch, end_epoch, utc_offset_hours)


def site_window(site: dict, events: "list[BrakingEvent]") -> ObservationWindow:
    offset = float(site.get("utc_offset_hours", 0.0))
    doc = site.get("observation_window")
    if doc:
        try:
            return ObservationWindow(
                float(doc["t_start"]), float(doc["t_end"]), offset
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed observation window: {exc}") from exc
    return derive_window(events, offset)


def build_products(
    store: Store,
    site: dict,
    names,
    hours=analytics.DEFAULT_REPORT_HOURS,
    bins: DistanceBins = DistanceBins(),
) -> dict:
    """Assemble the named report products from stored events."""
    site_id = str(site["site_id"])
    events = [event_from_row(r) for r in store.query_events(site_id)]
    offset = float(site.get("utc_offset_hours", 0.0))
    products: dict[str, object] = {}
    for name in names:
        if name == "hourly-counts":
            products[name] = analytics.hourly_counts(events, site_window(site, events))
        elif name == "hourly-stats":
            products[name] = analytics.hourly_stats(events, hours, offset)
        elif name == "heatmap":
            products[name] = analytics.severity_distance_heatmap(events, bins)
        elif name == "rstart-ecdf":
            products[name] = analytics.rstart_ecdf(events)
        elif name == "event-scatter":
            products[name] = analytics.event_scatter(events, site_geotransform(site))
        else:
            raise ConfigError(f"unknown report product {name!r}")
    return products

"""Aggregation of braking events into reporting products.

Products: mean daily counts per hour and severity, severity by start
distance heatmaps, hourly deceleration statistics, r_start ECDFs, and a
map-space event scatter. All quantiles share the braking module's
closest-ranks interpolation, and every emitter is deterministic so repeat
runs produce byte-identical files.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, time, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .braking import SEVERITY_ORDER, BrakingEvent, Severity, quantile
from .errors import ValidationError
from .ortho import GeoTransform, world_to_pixel

log = logging.getLogger(__name__)

DEFAULT_REPORT_HOURS = tuple(range(7, 20))  # 7 AM through 7 PM start hours


@dataclass(frozen=True)
class DistanceBins:
    """Start-distance bins; the last edge is +inf so the top bin is open."""

    edges: tuple[float, ...] = (0.0, 15.0, 30.0, 45.0, float("inf"))

    def __post_init__(self):
        if len(self.edges) < 2 or self.edges[-1] != float("inf"):
            raise ValidationError("bin edges must end with +inf")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValidationError("bin edges must be strictly increasing")

    @property
    def labels(self) -> tuple[str, ...]:
        out = []
        for lo, hi in zip(self.edges, self.edges[1:]):
            out.append(f"{lo:g}-{hi:g}" if hi != float("inf") else f"{lo:g}+")
        return tuple(out)

    def index_of(self, r: float) -> int:
        """Bin index with closed-lower edges: edges[i] <= r < edges[i+1]."""
        for i in range(len(self.edges) - 1):
            if self.edges[i] <= r < self.edges[i + 1]:
                return i
        raise ValidationError(f"distance {r} falls outside all bins")


@dataclass(frozen=True)
class HourlyStatsRow:
    hour: int
    n: int
    mean: float
    min: float
    p25: float
    p50: float
    p75: float
    p90: float

    def __post_init__(self):
        order = (self.min, self.p25, self.p50, self.p75, self.p90)
        if any(b < a for a, b in zip(order, order[1:])):
            raise ValidationError(f"quantiles out of order for hour {self.hour}")
        if self.mean < self.min:
            raise ValidationError(f"mean below min for hour {self.hour}")


@dataclass(frozen=True)
class HourlyCountRow:
    hour: int
    severity: Severity
    mean_daily_count: float


@dataclass(frozen=True)
class HeatmapTable:
    rows: tuple[str, ...]  # severity names, mild -> severe
    cols: tuple[str, ...]  # bin labels
    values: tuple[tuple[float, ...], ...]  # row-normalized proportions
    empty_rows: tuple[str, ...]  # severities with zero events (all-zero rows)

    def __post_init__(self):
        for name, row in zip(self.rows, self.values):
            total = sum(row)
            if name in self.empty_rows:
                if total != 0.0:
                    raise ValidationError(f"empty row {name} has nonzero values")
            elif abs(total - 1.0) > 1e-9:
                raise ValidationError(f"row {name} sums to {total}, expected 1")


@dataclass(frozen=True)
class ObservationWindow:
    """Wall-clock span the cameras were recording, in epoch seconds.

    utc_offset_hours shifts bucketing into the site's civil time; hour
    buckets never re-run DST arithmetic inside one window.
    """

    t_start: float
    t_end: float
    utc_offset_hours: float = 0.0

    def __post_init__(self):
        if not (self.t_start < self.t_end):
            raise ValidationError("observation window must have t_start < t_end")


def _to_local(t: float, utc_offset_hours: float) -> datetime:
    base = datetime.fromtimestamp(t, tz=timezone.utc)
    return (base + timedelta(hours=utc_offset_hours)).replace(tzinfo=None)


def local_hour(t: float, utc_offset_hours: float = 0.0) -> int:
    return _to_local(t, utc_offset_hours).hour


def observed_days_per_hour(window: ObservationWindow) -> dict[int, int]:
    """How many distinct local days had each hour slot inside the window."""
    start = _to_local(window.t_start, window.utc_offset_hours)
    end = _to_local(window.t_end, window.utc_offset_hours)
    counts: dict[int, int] = {}
    day = start.date()
    while datetime.combine(day, time(0)) < end:
        for hour in range(24):
            slot_start = datetime.combine(day, time(hour))
            slot_end = slot_start + timedelta(hours=1)
            if slot_start < end and slot_end > start:
                counts[hour] = counts.get(hour, 0) + 1
        day = day + timedelta(days=1)
    return counts


def hourly_counts(
    events: Sequence[BrakingEvent], window: ObservationWindow
) -> list[HourlyCountRow]:
    """Mean daily event count per local hour and severity.

    Buckets by t_start; raw counts are divided by the number of observed
    days for that hour, and hours outside the window are omitted.
    """
    days = observed_days_per_hour(window)
    raw: dict[tuple[int, Severity], int] = {}
    for ev in events:
        if not (window.t_start <= ev.t_start < window.t_end):
            continue
        hour = local_hour(ev.t_start, window.utc_offset_hours)
        raw[(hour, ev.severity)] = raw.get((hour, ev.severity), 0) + 1

    rows = []
    for hour in sorted(days):
        for sev in sorted(SEVERITY_ORDER, key=SEVERITY_ORDER.get):
            rows.append(HourlyCountRow(
                hour=hour,
                severity=sev,
                mean_daily_count=raw.get((hour, sev), 0) / days[hour],
            ))
    return rows


def severity_distance_heatmap(
    events: Sequence[BrakingEvent], bins: DistanceBins = DistanceBins()
) -> HeatmapTable:
    """Row-normalized proportions of r_start bins within each severity."""
    severities = sorted(SEVERITY_ORDER, key=SEVERITY_ORDER.get)
    counts = {sev: [0] * (len(bins.edges) - 1) for sev in severities}
    for ev in events:
        counts[ev.severity][bins.index_of(ev.r_start)] += 1

    values = []
    empty = []
    for sev in severities:
        row = counts[sev]
        total = sum(row)
        if total == 0:
            empty.append(sev.value)
            values.append(tuple(0.0 for _ in row))
        else:
            values.append(tuple(c / total for c in row))
    return HeatmapTable(
        rows=tuple(s.value for s in severities),
        cols=bins.labels,
        values=tuple(values),
        empty_rows=tuple(empty),
    )


def hourly_stats(
    events: Sequence[BrakingEvent],
    hours: Iterable[int] = DEFAULT_REPORT_HOURS,
    utc_offset_hours: float = 0.0,
) -> list[HourlyStatsRow]:
    """Per-hour count, mean, and quantiles of a_bar over the given hours.

    Hours with no events are omitted (noted in the log) so every emitted
    row carries a real distribution.
    """
    by_hour: dict[int, list[float]] = {}
    for ev in events:
        by_hour.setdefault(local_hour(ev.t_start, utc_offset_hours), []).append(ev.a_bar)

    rows = []
    for hour in hours:
        vals = by_hour.get(hour)
        if not vals:
            log.info("hourly stats: hour %d has no events; row omitted", hour)
            continue
        rows.append(HourlyStatsRow(
            hour=hour,
            n=len(vals),
            mean=sum(vals) / len(vals),
            min=min(vals),
            p25=quantile(vals, 0.25),
            p50=quantile(vals, 0.50),
            p75=quantile(vals, 0.75),
            p90=quantile(vals, 0.90),
        ))
    return rows


@dataclass(frozen=True)
class EcdfResult:
    r: tuple[float, ...]  # ascending sample values
    cdf: tuple[float, ...]  # step heights, (i+1)/n
    p95: float


def rstart_ecdf(events: Sequence[BrakingEvent]) -> EcdfResult:
    """Step ECDF of r_start with its 95th percentile marker."""
    if not events:
        raise ValidationError("ECDF requires at least one event")
    values = sorted(ev.r_start for ev in events)
    n = len(values)
    return EcdfResult(
        r=tuple(values),
        cdf=tuple((i + 1) / n for i in range(n)),
        p95=quantile(values, 0.95),
    )


def ecdf_at(ecdf: EcdfResult, x: float) -> float:
    """Fraction of samples <= x under the step definition."""
    count = 0
    for v in ecdf.r:
        if v <= x:
            count += 1
        else:
            break
    return count / len(ecdf.r)


def event_scatter(
    events: Sequence[BrakingEvent], gt: GeoTransform
) -> list[tuple[float, float, Severity]]:
    """Mean event positions in ortho pixels, severity passed through."""
    out = []
    for ev in events:
        x, y = world_to_pixel(gt, ev.mean_position[0], ev.mean_position[1])
        out.append((x, y, ev.severity))
    return out


def _csv(rows: Iterable[Sequence[object]], header: str) -> str:
    lines = [header]
    for row in rows:
        lines.append(",".join(
            repr(v) if isinstance(v, float) else str(v) for v in row
        ))
    return "\n".join(lines) + "\n"


PRODUCT_NAMES = (
    "hourly-counts", "hourly-stats", "heatmap", "rstart-ecdf", "event-scatter"
)


def _product_json(name: str, product: object):
    if name == "heatmap":
        return {
            "rows": list(product.rows),
            "cols": list(product.cols),
            "values": [list(r) for r in product.values],
            "empty_rows": list(product.empty_rows),
        }
    if name == "rstart-ecdf":
        return {"r": list(product.r), "cdf": list(product.cdf), "p95": product.p95}
    if name == "hourly-stats":
        return [
            {"hour": r.hour, "n": r.n, "mean": r.mean, "min": r.min,
             "p25": r.p25, "p50": r.p50, "p75": r.p75, "p90": r.p90}
            for r in product
        ]
    if name == "hourly-counts":
        return [
            {"hour": r.hour, "severity": r.severity.value,
             "mean_daily_count": r.mean_daily_count}
            for r in product
        ]
    if name == "event-scatter":
        return [{"x_px": x, "y_px": y, "severity": s.value} for x, y, s in product]
    raise ValidationError(f"unknown report product {name!r}")


def render_product(name: str, product: object, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_product_json(name, product), sort_keys=True,
                          separators=(",", ":")) + "\n"
    if name == "heatmap":
        rows = [
            (sev, col, val)
            for sev, vals in zip(product.rows, product.values)
            for col, val in zip(product.cols, vals)
        ]
        return _csv(rows, "severity,bin,proportion")
    if name == "rstart-ecdf":
        return _csv(zip(product.r, product.cdf), "r_start,cdf")
    if name == "hourly-stats":
        return _csv(
            ((r.hour, r.n, r.mean, r.min, r.p25, r.p50, r.p75, r.p90)
             for r in product),
            "hour,n,mean,min,p25,p50,p75,p90",
        )
    if name == "hourly-counts":
        return _csv(
            ((r.hour, r.severity.value, r.mean_daily_count) for r in product),
            "hour,severity,mean_daily_count",
        )
    if name == "event-scatter":
        return _csv(((x, y, s.value) for x, y, s in product), "x_px,y_px,severity")
    raise ValidationError(f"unknown report product {name!r}")


def emit_report(
    products: Mapping[str, object], fmt: str, path: Path
) -> list[Path]:
    """Write each product as {name}.{fmt} under path; returns written files.

    Output is deterministic: fixed column order, rows ordered hour
    ascending / severity mild<moderate<severe / bins ascending, floats
    serialized by repr. Re-running on identical input is byte-identical.
    """
    if fmt not in ("csv", "json"):
        raise ValidationError(f"format must be csv or json, got {fmt!r}")
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(products):
        target = out_dir / f"{name}.{fmt}"
        target.write_text(render_product(name, products[name], fmt), encoding="utf-8")
        written.append(target)
    return written

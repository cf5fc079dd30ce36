"""Reporting products built from braking events.

Oracles. Mean daily counts: 4 mild events in the 08:00 slot over a window
covering two full local days give 4/2 = 2.0. Hourly quantiles for a_bar
values [1.5, 2.0, 2.5, 3.0, 10.0]: positions q*(n-1) give p25 = 2.0,
p50 = 2.5, p75 = 3.0, and p90 at position 3.6 interpolates to
3.0 + 0.6*(10.0 - 3.0) = 7.2; the mean is 19/5 = 3.8. Heatmap: 49 of 100
mild starts in the first distance bin is a proportion of exactly 0.49.
"""
from __future__ import annotations

import json
from datetime import datetime, timezone

import pytest

from orthobrake.analytics import (
    DEFAULT_REPORT_HOURS,
    PRODUCT_NAMES,
    DistanceBins,
    EcdfResult,
    HeatmapTable,
    HourlyCountRow,
    HourlyStatsRow,
    ObservationWindow,
    ecdf_at,
    emit_report,
    event_scatter,
    hourly_counts,
    hourly_stats,
    local_hour,
    observed_days_per_hour,
    render_product,
    rstart_ecdf,
    severity_distance_heatmap,
)
from orthobrake.braking import BrakingEvent, Severity
from orthobrake.errors import ValidationError
from orthobrake.ortho import GeoTransform


def _epoch(day: int, hh: int, mm: int = 0) -> float:
    return datetime(2025, 6, day, hh, mm, tzinfo=timezone.utc).timestamp()


def _ev(t_start: float, a_bar: float = 2.0, severity: Severity = Severity.MILD,
        r_start: float = 20.0, duration: float = 1.0,
        mean_position: tuple[float, float] = (10.0, 0.0)) -> BrakingEvent:
    return BrakingEvent(
        track_id=1, video_id="v1", t_start=t_start, t_end=t_start + duration,
        duration=duration, a_bar=a_bar, a_robust=a_bar, peak_decel=a_bar + 0.5,
        r_start=r_start, mean_position=mean_position, severity=severity,
    )


TWO_DAYS = ObservationWindow(t_start=_epoch(2, 0), t_end=_epoch(4, 0))


# -- hour bucketing ----------------------------------------------------------------


class TestLocalHour:
    def test_utc(self):
        assert local_hour(_epoch(2, 14, 30)) == 14

    def test_negative_offset_crosses_midnight(self):
        assert local_hour(_epoch(2, 3), utc_offset_hours=-5.0) == 22

    def test_half_hour_offset(self):
        assert local_hour(_epoch(2, 10), utc_offset_hours=5.5) == 15


class TestObservedDays:
    def test_two_full_days(self):
        days = observed_days_per_hour(TWO_DAYS)
        assert set(days) == set(range(24))
        assert all(v == 2 for v in days.values())

    def test_partial_day_covers_only_touched_hours(self):
        w = ObservationWindow(t_start=_epoch(2, 9, 30), t_end=_epoch(2, 11, 15))
        assert observed_days_per_hour(w) == {9: 1, 10: 1, 11: 1}


# -- mean daily counts -------------------------------------------------------------


class TestHourlyCounts:
    def test_four_mild_over_two_days_mean_two(self):
        events = [
            _ev(_epoch(2, 8, 5)), _ev(_epoch(2, 8, 40)),
            _ev(_epoch(3, 8, 10)), _ev(_epoch(3, 8, 55)),
        ]
        rows = hourly_counts(events, TWO_DAYS)
        by_key = {(r.hour, r.severity): r.mean_daily_count for r in rows}
        assert by_key[(8, Severity.MILD)] == 2.0

    def test_zero_rows_emitted_for_observed_hours(self):
        rows = hourly_counts([_ev(_epoch(2, 8))], TWO_DAYS)
        # every observed hour appears for every severity, zeros included
        assert len(rows) == 24 * 3
        by_key = {(r.hour, r.severity): r.mean_daily_count for r in rows}
        assert by_key[(8, Severity.MILD)] == 0.5
        assert by_key[(8, Severity.SEVERE)] == 0.0
        assert by_key[(3, Severity.MODERATE)] == 0.0

    def test_rows_ordered_hour_then_severity(self):
        rows = hourly_counts([], TWO_DAYS)
        keys = [(r.hour, r.severity.value) for r in rows]
        sev_rank = {"mild": 0, "moderate": 1, "severe": 2}
        assert keys == sorted(keys, key=lambda k: (k[0], sev_rank[k[1]]))

    def test_events_outside_window_ignored(self):
        rows = hourly_counts([_ev(_epoch(10, 8))], TWO_DAYS)
        assert all(r.mean_daily_count == 0.0 for r in rows)

    def test_counts_conserved(self):
        events = [
            _ev(_epoch(2, 7)), _ev(_epoch(2, 7, 30), severity=Severity.SEVERE),
            _ev(_epoch(3, 12), severity=Severity.MODERATE), _ev(_epoch(3, 23, 59)),
        ]
        rows = hourly_counts(events, TWO_DAYS)
        days = observed_days_per_hour(TWO_DAYS)
        recovered = sum(r.mean_daily_count * days[r.hour] for r in rows)
        assert recovered == pytest.approx(len(events), abs=1e-9)

    def test_local_offset_shifts_bucket(self):
        w = ObservationWindow(t_start=_epoch(2, 0), t_end=_epoch(4, 0),
                              utc_offset_hours=-5.0)
        rows = hourly_counts([_ev(_epoch(2, 14))], w)
        by_key = {(r.hour, r.severity): r.mean_daily_count for r in rows}
        assert by_key[(9, Severity.MILD)] > 0.0
        assert by_key[(14, Severity.MILD)] == 0.0


# -- severity by start distance ----------------------------------------------------


class TestHeatmap:
    def test_forty_nine_of_hundred(self):
        events = [_ev(_epoch(2, 8), r_start=10.0) for _ in range(49)]
        events += [_ev(_epoch(2, 8), r_start=20.0) for _ in range(51)]
        hm = severity_distance_heatmap(events)
        assert hm.rows == ("mild", "moderate", "severe")
        assert hm.cols == ("0-15", "15-30", "30-45", "45+")
        assert hm.values[0] == (0.49, 0.51, 0.0, 0.0)

    def test_empty_severity_row_is_all_zero_and_flagged(self):
        events = [_ev(_epoch(2, 8), r_start=40.0, severity=Severity.MODERATE)]
        hm = severity_distance_heatmap(events)
        assert hm.values[0] == (0.0, 0.0, 0.0, 0.0)
        assert hm.values[1] == (0.0, 0.0, 1.0, 0.0)
        assert set(hm.empty_rows) == {"mild", "severe"}

    def test_rows_sum_to_one_unless_empty(self):
        events = [
            _ev(_epoch(2, 8), r_start=float(r), severity=sev)
            for r in (1, 16, 31, 46, 100)
            for sev in (Severity.MILD, Severity.SEVERE)
        ]
        hm = severity_distance_heatmap(events)
        for name, row in zip(hm.rows, hm.values):
            if name in hm.empty_rows:
                assert sum(row) == 0.0
            else:
                assert sum(row) == pytest.approx(1.0, abs=1e-9)

    def test_top_bin_is_open(self):
        hm = severity_distance_heatmap([_ev(_epoch(2, 8), r_start=1e6)])
        assert hm.values[0][-1] == 1.0

    def test_bin_edges_validated(self):
        with pytest.raises(ValidationError):
            DistanceBins(edges=(0.0, 15.0, 30.0))  # no +inf terminator
        with pytest.raises(ValidationError):
            DistanceBins(edges=(0.0, 15.0, 10.0, float("inf")))

    def test_bin_labels(self):
        assert DistanceBins().labels == ("0-15", "15-30", "30-45", "45+")


# -- hourly deceleration stats -----------------------------------------------------


class TestHourlyStats:
    def test_five_value_oracle_row(self):
        a_bars = [1.5, 2.0, 2.5, 3.0, 10.0]
        events = [_ev(_epoch(2, 9, i), a_bar=a) for i, a in enumerate(a_bars)]
        (row,) = hourly_stats(events, hours=[9])
        assert (row.hour, row.n) == (9, 5)
        assert row.mean == pytest.approx(3.8, abs=1e-12)
        assert row.min == 1.5
        assert (row.p25, row.p50, row.p75) == (2.0, 2.5, 3.0)
        assert row.p90 == pytest.approx(7.2, abs=1e-12)

    def test_single_event_collapses_all_stats(self):
        (row,) = hourly_stats([_ev(_epoch(2, 14), a_bar=2.0)], hours=[14])
        assert (row.n, row.mean, row.min) == (1, 2.0, 2.0)
        assert (row.p25, row.p50, row.p75, row.p90) == (2.0, 2.0, 2.0, 2.0)

    def test_empty_hours_omitted(self):
        rows = hourly_stats([_ev(_epoch(2, 9))], hours=[8, 9, 10])
        assert [r.hour for r in rows] == [9]

    def test_default_hours_span_business_day(self):
        assert DEFAULT_REPORT_HOURS == tuple(range(7, 20))

    def test_quantile_order_invariant_enforced(self):
        with pytest.raises(ValidationError):
            HourlyStatsRow(hour=9, n=2, mean=2.0, min=1.0,
                           p25=3.0, p50=2.0, p75=4.0, p90=5.0)


# -- start distance ECDF -----------------------------------------------------------


class TestRstartEcdf:
    def test_four_point_steps(self):
        events = [_ev(_epoch(2, 8), r_start=r) for r in (30.0, 10.0, 40.0, 20.0)]
        e = rstart_ecdf(events)
        assert e.r == (10.0, 20.0, 30.0, 40.0)
        assert e.cdf == (0.25, 0.5, 0.75, 1.0)

    def test_ecdf_at_step_semantics(self):
        e = rstart_ecdf([_ev(_epoch(2, 8), r_start=r) for r in (10.0, 20.0, 30.0, 40.0)])
        assert ecdf_at(e, 25.0) == 0.5
        assert ecdf_at(e, 20.0) == 0.5  # closed at the sample
        assert ecdf_at(e, 5.0) == 0.0
        assert ecdf_at(e, 40.0) == 1.0

    def test_p95_of_uniform_grid(self):
        events = [_ev(_epoch(2, 8), r_start=float(r)) for r in range(101)]
        assert rstart_ecdf(events).p95 == 95.0

    def test_no_events_rejected(self):
        with pytest.raises(ValidationError):
            rstart_ecdf([])


# -- map-space scatter -------------------------------------------------------------


class TestEventScatter:
    GT = GeoTransform(origin_x=0.0, origin_y=0.0, scale_x=0.1, scale_y=0.1)

    def test_world_to_pixel_example(self):
        pts = event_scatter(
            [_ev(_epoch(2, 8), mean_position=(1.0, -2.0), severity=Severity.SEVERE)],
            self.GT,
        )
        assert pts == [(10.0, 20.0, Severity.SEVERE)]


# -- rendering and emission --------------------------------------------------------


def _all_products():
    events = [
        _ev(_epoch(2, 8, 5), a_bar=1.6, r_start=10.0),
        _ev(_epoch(2, 8, 30), a_bar=2.8, r_start=25.0, severity=Severity.MODERATE),
        _ev(_epoch(3, 9, 10), a_bar=4.5, r_start=40.0, severity=Severity.SEVERE),
    ]
    gt = GeoTransform(origin_x=0.0, origin_y=0.0, scale_x=0.1, scale_y=0.1)
    return {
        "hourly-counts": hourly_counts(events, TWO_DAYS),
        "hourly-stats": hourly_stats(events),
        "heatmap": severity_distance_heatmap(events),
        "rstart-ecdf": rstart_ecdf(events),
        "event-scatter": event_scatter(events, gt),
    }


class TestRenderProduct:
    def test_product_name_registry(self):
        assert set(PRODUCT_NAMES) == set(_all_products())

    def test_csv_headers(self):
        products = _all_products()
        want = {
            "hourly-counts": "hour,severity,mean_daily_count",
            "hourly-stats": "hour,n,mean,min,p25,p50,p75,p90",
            "heatmap": "severity,bin,proportion",
            "rstart-ecdf": "r_start,cdf",
            "event-scatter": "x_px,y_px,severity",
        }
        for name, header in want.items():
            text = render_product(name, products[name], "csv")
            assert text.splitlines()[0] == header
            assert text.endswith("\n")

    def test_csv_floats_round_trip_exactly(self):
        text = render_product("rstart-ecdf", _all_products()["rstart-ecdf"], "csv")
        row = text.splitlines()[1].split(",")
        assert float(row[0]) == 10.0

    def test_json_is_compact_and_sorted(self):
        e = EcdfResult(r=(10.0,), cdf=(1.0,), p95=10.0)
        assert render_product("rstart-ecdf", e, "json") == (
            '{"cdf":[1.0],"p95":10.0,"r":[10.0]}\n'
        )

    def test_json_parses_for_every_product(self):
        for name, product in _all_products().items():
            json.loads(render_product(name, product, "json"))

    def test_unknown_product_rejected(self):
        with pytest.raises(ValidationError):
            render_product("speeding", [], "csv")


class TestEmitReport:
    def test_reruns_are_byte_identical(self, tmp_path):
        products = _all_products()
        first = emit_report(products, "csv", tmp_path / "out")
        blobs = {p.name: p.read_bytes() for p in first}
        second = emit_report(_all_products(), "csv", tmp_path / "out")
        assert [p.stem for p in second] == sorted(products)
        for p in second:
            assert p.read_bytes() == blobs[p.name]

    def test_json_format(self, tmp_path):
        written = emit_report(_all_products(), "json", tmp_path)
        assert {p.suffix for p in written} == {".json"}
        for p in written:
            json.loads(p.read_text())

    def test_bad_format_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_report(_all_products(), "yaml", tmp_path)


# -- table invariants --------------------------------------------------------------


class TestTableInvariants:
    def test_heatmap_rejects_lying_empty_row(self):
        with pytest.raises(ValidationError):
            HeatmapTable(rows=("mild",), cols=("0-15",), values=((0.7,),),
                         empty_rows=("mild",))

    def test_heatmap_rejects_unnormalized_row(self):
        with pytest.raises(ValidationError):
            HeatmapTable(rows=("mild",), cols=("0-15", "15+"),
                         values=((0.6, 0.3),), empty_rows=())

    def test_observation_window_order(self):
        with pytest.raises(ValidationError):
            ObservationWindow(t_start=10.0, t_end=10.0)

    def test_count_row_shape(self):
        row = HourlyCountRow(hour=8, severity=Severity.MILD, mean_daily_count=0.5)
        assert row.hour == 8

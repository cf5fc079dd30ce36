"""Orthoimagery georeferencing: pixel/world maps, world files, imagery fetch.

Oracle arithmetic used below:
  pixel (10, 20) under origin (0, 0) and scales 0.1 maps to
  (0 + 10*0.1, 0 - 20*0.1) = (1.0, -2.0).
  A 100 m x 50 m bbox rendered at 1000 x 500 px gives 0.1 m/px each way,
  and the world-file origin sits half a pixel inside the bbox corner
  (pixel-center convention): (min_x + 0.05, max_y - 0.05).
"""
from __future__ import annotations

import io
import math
from pathlib import Path

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from orthobrake.errors import (
    DecodeError,
    ParseError,
    ServiceError,
    TransportError,
    UnitError,
    ValidationError,
)
from orthobrake.ortho import (
    FEET_TO_METERS,
    BoundingBoxGeo,
    GeoTransform,
    OrthoRaster,
    fetch_ortho,
    load_raster,
    meters_per_pixel,
    pixel_to_world,
    read_world_file,
    save_raster,
    world_file_path,
    world_to_pixel,
    write_world_file,
)

GT01 = GeoTransform(origin_x=0.0, origin_y=0.0, scale_x=0.1, scale_y=0.1)


# -- coordinate maps -------------------------------------------------------------


class TestPixelWorldMaps:
    def test_origin_pixel_is_origin_world(self):
        assert pixel_to_world(GT01, 0.0, 0.0) == (0.0, 0.0)

    def test_linear_map(self):
        assert pixel_to_world(GT01, 10.0, 20.0) == (1.0, -2.0)

    def test_inverse_map(self):
        assert world_to_pixel(GT01, 1.0, -2.0) == (10.0, 20.0)

    def test_rows_grow_southward(self):
        _, n0 = pixel_to_world(GT01, 0.0, 0.0)
        _, n1 = pixel_to_world(GT01, 0.0, 1.0)
        assert n1 < n0

    @given(
        x=st.floats(-1e6, 1e6),
        y=st.floats(-1e6, 1e6),
        sx=st.floats(0.01, 10.0),
        sy=st.floats(0.01, 10.0),
        ox=st.floats(-1e5, 1e5),
        oy=st.floats(-1e5, 1e5),
    )
    def test_round_trip_within_1e9(self, x, y, sx, sy, ox, oy):
        gt = GeoTransform(origin_x=ox, origin_y=oy, scale_x=sx, scale_y=sy)
        e, n = pixel_to_world(gt, x, y)
        rx, ry = world_to_pixel(gt, e, n)
        assert math.isclose(rx, x, abs_tol=1e-9)
        assert math.isclose(ry, y, abs_tol=1e-9)


class TestMetersPerPixel:
    def test_metric_passthrough(self):
        assert meters_per_pixel(GT01) == (0.1, 0.1)

    def test_anisotropic_passthrough(self):
        gt = GeoTransform(origin_x=0, origin_y=0, scale_x=0.08, scale_y=0.12)
        assert meters_per_pixel(gt) == (0.08, 0.12)

    def test_feet_converted(self):
        gt = GeoTransform(
            origin_x=0, origin_y=0, scale_x=1.0, scale_y=2.0, crs_units="feet"
        )
        assert meters_per_pixel(gt) == (FEET_TO_METERS, 2.0 * FEET_TO_METERS)

    def test_degrees_rejected(self):
        gt = GeoTransform(
            origin_x=0, origin_y=0, scale_x=1e-6, scale_y=1e-6,
            crs_id="EPSG:4326", crs_units="degrees",
        )
        with pytest.raises(UnitError):
            meters_per_pixel(gt)


def test_geotransform_rejects_non_positive_scale():
    with pytest.raises(ValidationError):
        GeoTransform(origin_x=0, origin_y=0, scale_x=0.0, scale_y=0.1)
    with pytest.raises(ValidationError):
        GeoTransform(origin_x=0, origin_y=0, scale_x=0.1, scale_y=-0.1)


def test_bbox_rejects_inverted_corners():
    with pytest.raises(ValidationError):
        BoundingBoxGeo(min_lon=10.0, min_lat=0.0, max_lon=10.0, max_lat=1.0)
    with pytest.raises(ValidationError):
        BoundingBoxGeo(min_lon=0.0, min_lat=5.0, max_lon=1.0, max_lat=4.0)


# -- world file sidecar ----------------------------------------------------------


class TestWorldFile:
    def test_suffix_mapping(self):
        assert world_file_path(Path("a/b.png")) == Path("a/b.pgw")
        assert world_file_path(Path("a/b.tif")) == Path("a/b.tfw")
        assert world_file_path(Path("a/b.TIFF")) == Path("a/b.tfw")
        assert world_file_path(Path("a/b.jpg")) == Path("a/b.jgw")
        assert world_file_path(Path("a/b.bmp")) == Path("a/b.wld")

    def test_six_line_layout(self, tmp_path):
        gt = GeoTransform(origin_x=1000.05, origin_y=549.95, scale_x=0.1, scale_y=0.1)
        p = tmp_path / "r.pgw"
        write_world_file(gt, p)
        lines = p.read_text().splitlines()
        assert len(lines) == 6
        assert [float(v) for v in lines] == [0.1, 0.0, 0.0, -0.1, 1000.05, 549.95]

    def test_round_trip_bit_exact(self, tmp_path):
        # repr serialization must survive odd ulp-level values untouched
        gt = GeoTransform(
            origin_x=352100.123456789, origin_y=1018443.0000000001,
            scale_x=0.09999999999999998, scale_y=0.30000000000000004,
        )
        p = tmp_path / "r.pgw"
        write_world_file(gt, p)
        back = read_world_file(p)
        assert back.origin_x == gt.origin_x
        assert back.origin_y == gt.origin_y
        assert back.scale_x == gt.scale_x
        assert back.scale_y == gt.scale_y

    def test_rotation_terms_rejected(self, tmp_path):
        p = tmp_path / "r.pgw"
        p.write_text("0.1\n0.001\n0.0\n-0.1\n0.0\n0.0\n")
        with pytest.raises(ParseError):
            read_world_file(p)

    def test_positive_y_scale_rejected(self, tmp_path):
        p = tmp_path / "r.pgw"
        p.write_text("0.1\n0.0\n0.0\n0.1\n0.0\n0.0\n")
        with pytest.raises(ParseError):
            read_world_file(p)

    def test_wrong_value_count_rejected(self, tmp_path):
        p = tmp_path / "r.pgw"
        p.write_text("0.1\n0.0\n0.0\n-0.1\n0.0\n")
        with pytest.raises(ParseError):
            read_world_file(p)

    def test_non_numeric_rejected(self, tmp_path):
        p = tmp_path / "r.pgw"
        p.write_text("0.1\nzero\n0.0\n-0.1\n0.0\n0.0\n")
        with pytest.raises(ParseError):
            read_world_file(p)


def test_raster_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    px = rng.integers(0, 256, size=(8, 12, 3), dtype=np.uint8)
    gt = GeoTransform(origin_x=5.0, origin_y=9.0, scale_x=0.25, scale_y=0.5)
    raster = OrthoRaster(pixels=px, geotransform=gt, source_uri="mem")
    path = tmp_path / "site.png"
    save_raster(raster, path)
    back = load_raster(path)
    assert np.array_equal(back.pixels, px)
    assert back.geotransform.origin_x == 5.0
    assert back.geotransform.scale_y == 0.5
    assert back.width == 12 and back.height == 8


def test_load_raster_undecodable_is_decode_error(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"this is not a png")
    with pytest.raises(DecodeError):
        load_raster(path)


# -- imagery fetch ---------------------------------------------------------------


def _png_bytes(width: int, height: int) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.zeros((height, width, 3), dtype=np.uint8)).save(buf, "PNG")
    return buf.getvalue()


def _client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


class TestFetchOrtho:
    BBOX = BoundingBoxGeo(
        min_lon=1000.0, min_lat=500.0, max_lon=1100.0, max_lat=550.0
    )

    def test_geotransform_from_bbox_and_size(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen.update(dict(request.url.params))
            return httpx.Response(200, content=_png_bytes(1000, 500))

        raster = fetch_ortho(
            self.BBOX, (1000, 500), "http://imagery.test/export",
            client=_client(handler),
        )
        gt = raster.geotransform
        assert gt.scale_x == pytest.approx(0.1, abs=1e-12)
        assert gt.scale_y == pytest.approx(0.1, abs=1e-12)
        # origin is the center of pixel (0, 0)
        assert gt.origin_x == pytest.approx(1000.05, abs=1e-12)
        assert gt.origin_y == pytest.approx(549.95, abs=1e-12)
        assert seen["bbox"] == "1000.0,500.0,1100.0,550.0"
        assert seen["size"] == "1000,500"
        assert seen["bboxSR"] == "6438"
        assert seen["f"] == "image"

    def test_corner_pixel_lands_on_bbox_corner_within_one_pixel(self):
        raster = fetch_ortho(
            self.BBOX, (1000, 500), "http://imagery.test/export",
            client=_client(lambda r: httpx.Response(200, content=_png_bytes(1000, 500))),
        )
        gt = raster.geotransform
        e, n = pixel_to_world(gt, 0.0, 0.0)
        assert abs(e - self.BBOX.min_lon) <= gt.scale_x
        assert abs(n - self.BBOX.max_lat) <= gt.scale_y

    def test_network_failure_is_transport_error(self):
        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        with pytest.raises(TransportError):
            fetch_ortho(self.BBOX, (10, 5), "http://down.test", client=_client(handler))

    def test_http_error_status_is_service_error(self):
        with pytest.raises(ServiceError) as exc:
            fetch_ortho(
                self.BBOX, (10, 5), "http://imagery.test",
                client=_client(lambda r: httpx.Response(503, content=b"busy")),
            )
        assert exc.value.status_code == 503

    def test_undecodable_body_is_decode_error(self):
        with pytest.raises(DecodeError):
            fetch_ortho(
                self.BBOX, (10, 5), "http://imagery.test",
                client=_client(lambda r: httpx.Response(200, content=b"<html>oops")),
            )

    def test_size_mismatch_uses_actual_pixels(self):
        raster = fetch_ortho(
            self.BBOX, (1000, 500), "http://imagery.test",
            client=_client(lambda r: httpx.Response(200, content=_png_bytes(500, 250))),
        )
        assert raster.width == 500 and raster.height == 250
        assert raster.geotransform.scale_x == pytest.approx(0.2)

    def test_zero_size_rejected(self):
        with pytest.raises(ValidationError):
            fetch_ortho(self.BBOX, (0, 5), "http://imagery.test")

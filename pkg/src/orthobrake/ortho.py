"""Georeferenced orthoimagery: retrieval, raster I/O, pixel/world mapping.

Coordinates follow the pixel-center convention: pixel (0, 0) maps to the
world coordinate of its own center, not of the raster's outer corner. A
world file sidecar therefore stores the center of the top-left pixel.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np
from PIL import Image

from .errors import (
    DecodeError,
    ParseError,
    ServiceError,
    TransportError,
    UnitError,
    ValidationError,
)

log = logging.getLogger(__name__)

FEET_TO_METERS = 0.3048

# sidecar suffix by raster suffix, ESRI world file convention
WORLD_SUFFIX = {".png": ".pgw", ".tif": ".tfw", ".tiff": ".tfw", ".jpg": ".jgw"}

DEFAULT_CRS = "EPSG:6438"


@dataclass(frozen=True)
class BoundingBoxGeo:
    """Axis-aligned geographic extent, min corner strictly below max corner."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float
    crs_id: str = DEFAULT_CRS

    def __post_init__(self):
        vals = (self.min_lon, self.min_lat, self.max_lon, self.max_lat)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError(f"bounding box has non-finite corner: {vals}")
        if not (self.min_lon < self.max_lon and self.min_lat < self.max_lat):
            raise ValidationError(
                "bounding box min corner must be strictly below max corner, "
                f"got {vals}"
            )

    def as_query(self) -> str:
        return f"{self.min_lon},{self.min_lat},{self.max_lon},{self.max_lat}"


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel-to-world map for a north-up raster.

    origin_x/origin_y are the world coordinates of the center of pixel
    (0, 0). scale_x and scale_y are the pixel footprint in CRS units and
    are both positive; northing decreases as the pixel row increases.
    """

    origin_x: float
    origin_y: float
    scale_x: float
    scale_y: float
    crs_id: str = DEFAULT_CRS
    crs_units: str = "meters"  # meters | feet | degrees

    def __post_init__(self):
        if not (self.scale_x > 0 and self.scale_y > 0):
            raise ValidationError(
                f"pixel scales must be positive, got ({self.scale_x}, {self.scale_y})"
            )
        if self.crs_units not in ("meters", "feet", "degrees"):
            raise ValidationError(f"unknown crs_units {self.crs_units!r}")


@dataclass(frozen=True)
class OrthoRaster:
    """Image pixels plus the geotransform that places them in the world."""

    pixels: np.ndarray  # (h, w, 3) uint8
    geotransform: GeoTransform
    source_uri: str = ""

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValidationError(
                f"raster pixels must be (h, w, 3) uint8, got {px.shape} {px.dtype}"
            )
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def pixel_to_world(gt: GeoTransform, x: float, y: float) -> tuple[float, float]:
    """Map a pixel position to (easting, northing) in CRS units."""
    return (gt.origin_x + x * gt.scale_x, gt.origin_y - y * gt.scale_y)


def world_to_pixel(gt: GeoTransform, e: float, n: float) -> tuple[float, float]:
    """Inverse of pixel_to_world; returns fractional pixel coordinates."""
    return ((e - gt.origin_x) / gt.scale_x, (gt.origin_y - n) / gt.scale_y)


def meters_per_pixel(gt: GeoTransform) -> tuple[float, float]:
    """Pixel footprint in meters; raises UnitError for angular CRS units."""
    if gt.crs_units == "meters":
        return (gt.scale_x, gt.scale_y)
    if gt.crs_units == "feet":
        return (gt.scale_x * FEET_TO_METERS, gt.scale_y * FEET_TO_METERS)
    raise UnitError(
        f"{gt.crs_id} uses angular units; metric scale is undefined without a "
        "projection step"
    )


def world_file_path(raster_path: Path) -> Path:
    suffix = WORLD_SUFFIX.get(raster_path.suffix.lower(), ".wld")
    return raster_path.with_suffix(suffix)


def write_world_file(gt: GeoTransform, path: Path) -> None:
    """Write the six-line ESRI world file for a north-up raster.

    Values are serialized with repr() so a read-back reproduces the exact
    same floats.
    """
    lines = [
        repr(float(gt.scale_x)),
        repr(0.0),
        repr(0.0),
        repr(-float(gt.scale_y)),
        repr(float(gt.origin_x)),
        repr(float(gt.origin_y)),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def read_world_file(
    path: Path, crs_id: str = DEFAULT_CRS, crs_units: str = "meters"
) -> GeoTransform:
    try:
        raw = path.read_text(encoding="ascii").split()
    except OSError as exc:
        raise ParseError(f"cannot read world file {path}: {exc}") from exc
    if len(raw) != 6:
        raise ParseError(f"world file {path} must have 6 values, got {len(raw)}")
    try:
        sx, rot1, rot2, neg_sy, ox, oy = (float(v) for v in raw)
    except ValueError as exc:
        raise ParseError(f"world file {path} has a non-numeric value") from exc
    if rot1 != 0.0 or rot2 != 0.0:
        raise ParseError(f"world file {path} encodes rotation; only north-up supported")
    if neg_sy >= 0:
        raise ParseError(f"world file {path} must have negative y scale, got {neg_sy}")
    return GeoTransform(
        origin_x=ox, origin_y=oy, scale_x=sx, scale_y=-neg_sy,
        crs_id=crs_id, crs_units=crs_units,
    )


def save_raster(raster: OrthoRaster, path: Path) -> None:
    """Write the image and its world file sidecar."""
    path = Path(path)
    Image.fromarray(raster.pixels).save(path)
    write_world_file(raster.geotransform, world_file_path(path))


def load_raster(
    path: Path, crs_id: str = DEFAULT_CRS, crs_units: str = "meters"
) -> OrthoRaster:
    """Read an image plus sidecar written by save_raster."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise DecodeError(f"cannot decode raster {path}: {exc}") from exc
    gt = read_world_file(world_file_path(path), crs_id=crs_id, crs_units=crs_units)
    return OrthoRaster(pixels=pixels, geotransform=gt, source_uri=str(path))


def fetch_ortho(
    bbox: BoundingBoxGeo,
    size_px: tuple[int, int],
    endpoint: str,
    client: httpx.Client | None = None,
    crs_units: str = "meters",
    timeout: float = 30.0,
) -> OrthoRaster:
    """Request an orthoimage export for bbox at size_px = (width, height).

    The endpoint is an ArcGIS-style image export URL; the response must be a
    decodable PNG/JPEG. The returned geotransform is derived from the bbox
    and size under the pixel-center convention.
    """
    w, h = size_px
    if w <= 0 or h <= 0:
        raise ValidationError(f"requested size must be positive, got {size_px}")

    params = {
        "bbox": bbox.as_query(),
        "bboxSR": bbox.crs_id.split(":")[-1],
        "size": f"{w},{h}",
        "imageSR": bbox.crs_id.split(":")[-1],
        "format": "png",
        "f": "image",
    }
    own_client = client is None
    cl = client or httpx.Client(timeout=timeout)
    try:
        try:
            resp = cl.get(endpoint, params=params)
        except httpx.HTTPError as exc:
            raise TransportError(f"imagery request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ServiceError(
                f"imagery endpoint returned HTTP {resp.status_code}",
                status_code=resp.status_code,
            )
        try:
            with Image.open(io.BytesIO(resp.content)) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise DecodeError(f"imagery payload is not a decodable image: {exc}") from exc
    finally:
        if own_client:
            cl.close()

    if pixels.shape[0] != h or pixels.shape[1] != w:
        log.warning(
            "imagery endpoint returned %dx%d instead of %dx%d; using actual size",
            pixels.shape[1], pixels.shape[0], w, h,
        )
        h, w = pixels.shape[0], pixels.shape[1]

    scale_x = (bbox.max_lon - bbox.min_lon) / w
    scale_y = (bbox.max_lat - bbox.min_lat) / h
    gt = GeoTransform(
        origin_x=bbox.min_lon + scale_x / 2.0,
        origin_y=bbox.max_lat - scale_y / 2.0,
        scale_x=scale_x,
        scale_y=scale_y,
        crs_id=bbox.crs_id,
        crs_units=crs_units,
    )
    return OrthoRaster(pixels=pixels, geotransform=gt, source_uri=str(endpoint))

"""HTTP facade over estimation, ingestion, storage, and reporting.

One process owns one store directory. Wire errors always carry
{"code", "message", "details"}; each domain exception class maps to a
fixed status and code so clients can branch without parsing messages.
Write endpoints serialize per site, so concurrent ingests against the
same site cannot interleave their store batches.
"""
from __future__ import annotations

import copy
import hashlib
import io
import json
import threading
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, File, Request, Response, UploadFile
from fastapi.responses import JSONResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import analytics, pipeline
from .config import AppConfig
from .correspond import annotations_from_doc, annotations_to_doc, set_from_doc, set_to_doc
from .errors import (
    ConfigError,
    DecodeError,
    EstimationError,
    EstimationFailure,
    GeometryError,
    HorizonError,
    OrthobrakeError,
    ParseError,
    SchemaVersionError,
    ServiceError,
    StoreConflictError,
    StoreError,
    StoreLockError,
    StoreSchemaError,
    TooShortError,
    TrajectoryRejected,
    TransportError,
    UnitError,
    ValidationError,
)
from .homog import HomographyRecord, RobustParams, estimate_robust, warp_image
from .ortho import BoundingBoxGeo, OrthoRaster, fetch_ortho, load_raster, save_raster
from .store import Store

# most specific class first; the handler walks this in order
_ERROR_MAP: "list[tuple[type, int, str]]" = [
    (SchemaVersionError, 400, "schema_version_error"),
    (ParseError, 400, "parse_error"),
    (UnitError, 400, "unit_error"),
    (GeometryError, 400, "geometry_error"),
    (TooShortError, 422, "track_too_short"),
    (TrajectoryRejected, 422, "trajectory_rejected"),
    (HorizonError, 422, "horizon_crossing"),
    (ValidationError, 400, "validation_error"),
    (TransportError, 502, "imagery_unreachable"),
    (DecodeError, 502, "imagery_decode_error"),
    (ServiceError, 502, "imagery_service_error"),
    (EstimationFailure, 409, "estimation_failure"),
    (EstimationError, 409, "estimation_error"),
    (ConfigError, 422, "config_error"),
    (StoreConflictError, 409, "store_conflict"),
    (StoreLockError, 503, "store_locked"),
    (StoreSchemaError, 500, "store_schema_error"),
    (StoreError, 500, "store_error"),
    (OrthobrakeError, 400, "error"),
]


class ApiError(Exception):
    """Endpoint-level failure with an explicit wire status and code."""

    def __init__(self, status: int, code: str, message: str, details: dict | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.details = details or {}


def _error_response(status: int, code: str, message: str, details: dict) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "details": details},
    )


def _not_found(code: str, message: str) -> ApiError:
    return ApiError(404, code, message)


def create_app(config: AppConfig) -> FastAPI:
    app = FastAPI(title="orthobrake", docs_url=None, redoc_url=None)
    store = Store(config.store_dir, mode="rw")
    locks: "defaultdict[str, threading.Lock]" = defaultdict(threading.Lock)
    app.state.config = config
    app.state.store = store

    assets_root = Path(config.store_dir) / "assets"

    @app.exception_handler(ApiError)
    async def _api_error_handler(request: Request, exc: ApiError):
        return _error_response(exc.status, exc.code, str(exc), exc.details)

    @app.exception_handler(OrthobrakeError)
    async def _domain_error_handler(request: Request, exc: OrthobrakeError):
        for cls, status, code in _ERROR_MAP:
            if isinstance(exc, cls):
                return _error_response(status, code, str(exc), {})
        return _error_response(400, "error", str(exc), {})

    @app.on_event("shutdown")
    def _close_store():
        store.close()

    # -- helpers ---------------------------------------------------------

    def _site(site_id: str) -> dict:
        doc = store.get_site(site_id)
        if doc is None:
            raise _not_found("unknown_site", f"site {site_id!r} does not exist")
        return copy.deepcopy(doc)

    def _save_site(doc: dict) -> None:
        store.put_site(doc)

    def _asset_dir(site_id: str) -> Path:
        d = assets_root / site_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _load_site_ortho(site: dict) -> OrthoRaster:
        path = site.get("ortho_path")
        if not path or not Path(path).exists():
            raise _not_found("no_ortho", "site has no orthoimage")
        gt = pipeline.site_geotransform(site)
        raster = load_raster(Path(path), crs_id=gt.crs_id, crs_units=gt.crs_units)
        return raster

    def _png_bytes(pixels: np.ndarray) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(pixels).save(buf, format="PNG")
        return buf.getvalue()

    # -- sites -----------------------------------------------------------

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/sites")
    def list_sites():
        return {"sites": store.list_sites()}

    @app.post("/sites", status_code=201)
    def create_site(payload: dict = Body(...)):
        site_id = payload.get("site_id")
        if not isinstance(site_id, str) or not site_id:
            raise ValidationError("site_id must be a non-empty string")
        if store.get_site(site_id) is not None:
            raise ApiError(409, "site_exists", f"site {site_id!r} already exists")
        with locks[site_id]:
            doc: dict = {
                "site_id": site_id,
                "utc_offset_hours": float(
                    payload.get("utc_offset_hours", config.utc_offset_hours)
                ),
                "homographies": [],
            }
            if payload.get("geotransform") is not None:
                gt = pipeline.geotransform_from_doc(payload["geotransform"])
                doc["geotransform"] = pipeline.geotransform_to_doc(gt)
            if payload.get("annotations") is not None:
                ann = annotations_from_doc(payload["annotations"])
                doc["annotations"] = annotations_to_doc(ann)
            if payload.get("observation_window") is not None:
                w = payload["observation_window"]
                doc["observation_window"] = {
                    "t_start": float(w["t_start"]), "t_end": float(w["t_end"]),
                }
            imagery = payload.get("imagery")
            if imagery is not None:
                endpoint = imagery.get("endpoint") or config.imagery_endpoint
                if not endpoint:
                    raise ConfigError("no imagery endpoint configured")
                bbox = BoundingBoxGeo(*[float(v) for v in imagery["bbox"]])
                size = tuple(int(v) for v in imagery["size"])
                raster = fetch_ortho(
                    bbox, size, endpoint,
                    crs_units=str(imagery.get("crs_units", "meters")),
                )
                path = _asset_dir(site_id) / "ortho.png"
                save_raster(raster, path)
                doc["ortho_path"] = str(path)
                doc["geotransform"] = pipeline.geotransform_to_doc(raster.geotransform)
                doc["ortho_source"] = raster.source_uri
            _save_site(doc)
        return doc

    @app.get("/sites/{site_id}")
    def get_site(site_id: str):
        return _site(site_id)

    # -- correspondence pairs and annotations ------------------------------

    @app.put("/sites/{site_id}/pairs")
    def put_pairs(site_id: str, payload: dict = Body(...)):
        with locks[site_id]:
            site = _site(site_id)
            cset = set_from_doc(payload)
            site["pairs"] = set_to_doc(cset)
            _save_site(site)
            return {"pairs": len(cset.pairs), "warnings": cset.estimation_warnings()}

    @app.get("/sites/{site_id}/pairs")
    def get_pairs(site_id: str):
        site = _site(site_id)
        if "pairs" not in site:
            raise _not_found("no_pairs", "site has no correspondence set")
        return site["pairs"]

    @app.put("/sites/{site_id}/annotations")
    def put_annotations(site_id: str, payload: dict = Body(...)):
        with locks[site_id]:
            site = _site(site_id)
            ann = annotations_from_doc(payload)
            site["annotations"] = annotations_to_doc(ann)
            _save_site(site)
            return site["annotations"]

    @app.get("/sites/{site_id}/annotations")
    def get_annotations(site_id: str):
        site = _site(site_id)
        if "annotations" not in site:
            raise _not_found("no_annotations", "site has no annotations")
        return site["annotations"]

    # -- estimation ---------------------------------------------------------

    @app.post("/sites/{site_id}/estimate")
    def estimate(site_id: str, payload: dict | None = Body(default=None)):
        payload = payload or {}
        with locks[site_id]:
            site = _site(site_id)
            if "pairs" not in site:
                raise _not_found("no_pairs", "site has no correspondence set")
            cset = set_from_doc(site["pairs"])
            base = config.robust
            params = RobustParams(
                max_iterations=int(payload.get("max_iterations", base.max_iterations)),
                inlier_threshold=float(
                    payload.get("inlier_threshold", base.inlier_threshold)
                ),
                scoring=str(payload.get("scoring", base.scoring)),
                sigma_max=float(payload.get("sigma_max", base.sigma_max)),
                confidence=float(payload.get("confidence", base.confidence)),
                seed=int(payload.get("seed", base.seed)),
            )
            result = estimate_robust(cset.pairs, params)
            pairs_sha = hashlib.sha256(
                json.dumps(site["pairs"], sort_keys=True).encode()
            ).hexdigest()
            record = HomographyRecord(
                homography=result.homography,
                valid_from=payload.get("valid_from"),
                valid_to=payload.get("valid_to"),
                filename_pattern=payload.get("filename_pattern"),
                site_id=site_id,
                created_at=datetime.now(timezone.utc).isoformat(),
                source_pairs_sha256=pairs_sha,
                label=str(payload.get("label", "")),
            )
            site.setdefault("homographies", []).append(pipeline.record_to_doc(record))
            _save_site(site)
            return {
                "h": result.homography.to_list(),
                "inlier_mask": [bool(b) for b in result.inlier_mask],
                "inlier_count": int(result.inlier_mask.sum()),
                "score": result.score,
                "iterations_run": result.iterations_run,
                "mean_inlier_error": result.mean_inlier_error,
                "seed": params.seed,
                "warnings": cset.estimation_warnings(),
                "record_index": len(site["homographies"]) - 1,
            }

    @app.get("/sites/{site_id}/homographies")
    def get_homographies(site_id: str):
        return {"homographies": _site(site_id).get("homographies", [])}

    # -- imagery ------------------------------------------------------------

    @app.put("/sites/{site_id}/camera-frame")
    async def put_camera_frame(site_id: str, request: Request):
        body = await request.body()
        try:
            with Image.open(io.BytesIO(body)) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise DecodeError(f"camera frame is not a decodable image: {exc}")
        with locks[site_id]:
            site = _site(site_id)
            path = _asset_dir(site_id) / "camera.png"
            Image.fromarray(pixels).save(path)
            site["camera_frame_path"] = str(path)
            _save_site(site)
        return {"width": pixels.shape[1], "height": pixels.shape[0]}

    @app.get("/sites/{site_id}/camera-frame")
    def get_camera_frame(site_id: str):
        site = _site(site_id)
        path = site.get("camera_frame_path")
        if not path or not Path(path).exists():
            raise _not_found("no_camera_frame", "site has no camera frame")
        return Response(Path(path).read_bytes(), media_type="image/png")

    @app.get("/sites/{site_id}/ortho")
    def get_ortho(site_id: str):
        site = _site(site_id)
        raster = _load_site_ortho(site)
        return Response(_png_bytes(raster.pixels), media_type="image/png")

    @app.get("/sites/{site_id}/overlay")
    def get_overlay(site_id: str, alpha: float = 0.5):
        if not (0.0 <= alpha <= 1.0):
            raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
        site = _site(site_id)
        records = site.get("homographies", [])
        if not records:
            raise _not_found("no_homography", "site has no estimated homography")
        h = pipeline.record_from_doc(records[-1]).homography
        raster = _load_site_ortho(site)
        cam_path = site.get("camera_frame_path")
        if not cam_path or not Path(cam_path).exists():
            raise _not_found("no_camera_frame", "site has no camera frame")
        with Image.open(cam_path) as im:
            frame = np.asarray(im.convert("RGB"), dtype=np.uint8)
        warped = warp_image(h, frame, (raster.width, raster.height))
        base = raster.pixels.astype(np.float64)
        rgb = warped[:, :, :3].astype(np.float64)
        a = (warped[:, :, 3:4].astype(np.float64) / 255.0) * alpha
        blended = np.clip(base * (1.0 - a) + rgb * a, 0.0, 255.0).astype(np.uint8)
        return Response(_png_bytes(blended), media_type="image/png")

    # -- ingestion and queries ------------------------------------------------

    @app.post("/sites/{site_id}/ingest")
    async def ingest(
        site_id: str,
        detections: UploadFile = File(...),
        meta: UploadFile = File(...),
    ):
        det_bytes = await detections.read()
        meta_bytes = await meta.read()
        with locks[site_id]:
            site = _site(site_id)
            summary = pipeline.ingest_video(
                store,
                site,
                det_bytes.decode("utf-8").splitlines(),
                meta_bytes,
                config.settings,
            )
        return summary.to_doc()

    @app.post("/sites/{site_id}/detect")
    def detect(site_id: str, payload: dict | None = Body(default=None)):
        payload = payload or {}
        with locks[site_id]:
            site = _site(site_id)
            video_id = payload.get("video_id")
            return pipeline.detect_site(
                store, site, config.settings,
                video_id=str(video_id) if video_id is not None else None,
            )

    @app.get("/sites/{site_id}/tracks")
    def get_tracks(site_id: str, video_id: str | None = None):
        _site(site_id)
        return {"trajectories": store.query_trajectories(site_id, video_id)}

    @app.get("/sites/{site_id}/events")
    def get_events(
        site_id: str,
        severity: str | None = None,
        t_from: float | None = None,
        t_to: float | None = None,
    ):
        _site(site_id)
        return {
            "events": store.query_events(
                site_id,
                t_from=t_from if t_from is not None else float("-inf"),
                t_to=t_to if t_to is not None else float("inf"),
                severity=severity,
            )
        }

    @app.delete("/sites/{site_id}/events")
    def delete_events(site_id: str, video_id: str | None = None):
        with locks[site_id]:
            _site(site_id)
            return {"deleted": store.delete_events(site_id, video_id)}

    # -- reports -----------------------------------------------------------

    @app.get("/sites/{site_id}/reports/{product}")
    def get_report(site_id: str, product: str, format: str = "json"):
        if product not in analytics.PRODUCT_NAMES:
            raise _not_found("unknown_product", f"unknown report product {product!r}")
        if format not in ("json", "csv"):
            raise ValidationError(f"format must be csv or json, got {format!r}")
        site = _site(site_id)
        products = pipeline.build_products(store, site, [product])
        body = analytics.render_product(product, products[product], format)
        media = "application/json" if format == "json" else "text/csv"
        return Response(body, media_type=media)

    # -- static UI -----------------------------------------------------------

    if config.ui_dir and Path(config.ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

        @app.get("/", include_in_schema=False)
        def index():
            return RedirectResponse("/ui/")

    return app

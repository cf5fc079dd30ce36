"""Command line front end.

Every command prints a JSON result on stdout; failures print a single
machine-parsable line on stderr ("error: <ClassName>: <message>") and exit
with status 2 for domain errors, 1 for anything unexpected. Commands that
write to the store take the same single-writer lock the service holds, so
a running server and a CLI ingest cannot corrupt each other; the second
writer fails fast instead.
"""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import analytics, pipeline
from .config import AppConfig, load_config
from .errors import ConfigError, OrthobrakeError, ValidationError
from .homog import RobustParams, estimate_robust
from .ortho import BoundingBoxGeo, fetch_ortho, save_raster, world_file_path
from .correspond import load_set
from .store import Store


def _echo_json(doc) -> None:
    click.echo(json.dumps(doc, sort_keys=True))


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OrthobrakeError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _parse_bbox(text: str) -> BoundingBoxGeo:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValidationError(f"bbox must be minlon,minlat,maxlon,maxlat, got {text!r}")
    try:
        return BoundingBoxGeo(*[float(p) for p in parts])
    except ValueError as exc:
        raise ValidationError(f"bad bbox {text!r}: {exc}") from exc


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ValidationError(f"size must be WIDTHxHEIGHT, got {text!r}") from exc


def _parse_hours(text: str) -> tuple[int, ...]:
    try:
        lo, hi = text.split("-")
        lo_i, hi_i = int(lo), int(hi)
    except ValueError as exc:
        raise ValidationError(f"hours must be LO-HI, got {text!r}") from exc
    if not (0 <= lo_i <= hi_i <= 23):
        raise ValidationError(f"hours out of range: {text!r}")
    return tuple(range(lo_i, hi_i + 1))


def _load_site_doc(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read site config {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("site_id"), str):
        raise ConfigError(f"site config {path} must be an object with a site_id")
    return doc


def _resolve_site(store: Store, site_id: str | None, site_config: str | None) -> dict:
    """Site doc from the store, optionally upserted from a config file first."""
    if site_config is not None:
        doc = _load_site_doc(site_config)
        if site_id is not None and doc["site_id"] != site_id:
            raise ConfigError(
                f"--site {site_id!r} does not match site config "
                f"site_id {doc['site_id']!r}"
            )
        store.put_site(doc)
        return doc
    if site_id is None:
        raise ConfigError("pass --site or --site-config")
    doc = store.get_site(site_id)
    if doc is None:
        raise ConfigError(f"site {site_id!r} is not in the store")
    return doc


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; env vars override it.")
@click.pass_context
def main(ctx, config_path):
    """Fixed-camera ground-plane rectification and braking analytics."""
    ctx.obj = load_config(config_path)


@main.command("fetch-ortho")
@click.option("--bbox", required=True, help="minlon,minlat,maxlon,maxlat")
@click.option("--size", required=True, help="WIDTHxHEIGHT in pixels")
@click.option("--endpoint", default=None, help="imagery export endpoint URL")
@click.option("--units", default="meters", show_default=True,
              type=click.Choice(["meters", "feet", "degrees"]))
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
@_fail_cleanly
def fetch_ortho_cmd(cfg: AppConfig, bbox, size, endpoint, units, out):
    """Download georeferenced orthoimagery covering a bounding box."""
    endpoint = endpoint or cfg.imagery_endpoint
    if not endpoint:
        raise ConfigError("no imagery endpoint given (flag or config)")
    raster = fetch_ortho(_parse_bbox(bbox), _parse_size(size), endpoint,
                         crs_units=units)
    save_raster(raster, Path(out))
    _echo_json({
        "out": str(out),
        "world_file": str(world_file_path(Path(out))),
        "width": raster.width,
        "height": raster.height,
        "source": raster.source_uri,
    })


@main.command("estimate")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int,
              help="RNG seed; defaults to the configured seed.")
@click.option("--scoring", default=None,
              type=click.Choice(["msac", "sigma_marginalized"]))
@click.option("--sigma-max", default=None, type=float)
@click.option("--threshold", default=None, type=float,
              help="inlier threshold in pixels")
@click.option("--confidence", default=None, type=float)
@click.option("--max-iterations", default=None, type=int)
@click.option("--out", default=None, type=click.Path(),
              help="also write the result JSON here")
@click.pass_obj
@_fail_cleanly
def estimate_cmd(cfg: AppConfig, pairs_path, seed, scoring, sigma_max,
                 threshold, confidence, max_iterations, out):
    """Robustly fit a homography to a correspondence file."""
    base = cfg.robust
    params = RobustParams(
        max_iterations=max_iterations if max_iterations is not None else base.max_iterations,
        inlier_threshold=threshold if threshold is not None else base.inlier_threshold,
        scoring=scoring if scoring is not None else base.scoring,
        sigma_max=sigma_max if sigma_max is not None else base.sigma_max,
        confidence=confidence if confidence is not None else base.confidence,
        seed=seed if seed is not None else base.seed,
    )
    cset = load_set(Path(pairs_path))
    result = estimate_robust(cset.pairs, params)
    doc = {
        "h": result.homography.to_list(),
        "inlier_mask": [bool(b) for b in result.inlier_mask],
        "inlier_count": int(result.inlier_mask.sum()),
        "score": result.score,
        "iterations_run": result.iterations_run,
        "mean_inlier_error": result.mean_inlier_error,
        "seed": params.seed,
        "warnings": cset.estimation_warnings(),
    }
    if out:
        Path(out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")
    _echo_json(doc)


@main.command("ingest")
@click.option("--site", "site_id", default=None)
@click.option("--site-config", default=None, type=click.Path(exists=True),
              help="JSON site document to upsert before ingesting")
@click.option("--store", "store_dir", default=None, type=click.Path())
@click.option("--detections", "detection_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--meta", "meta_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--parallel", default=1, show_default=True, type=int)
@click.pass_obj
@_fail_cleanly
def ingest_cmd(cfg: AppConfig, site_id, site_config, store_dir,
               detection_paths, meta_paths, parallel):
    """Turn detection NDJSON plus its metadata sidecar into stored
    trajectories and braking events. Repeat --detections/--meta in pairs
    for several videos."""
    if len(detection_paths) != len(meta_paths):
        raise ConfigError(
            f"{len(detection_paths)} detection file(s) but "
            f"{len(meta_paths)} meta file(s); pass them in pairs"
        )
    jobs = []
    for det_path, meta_path in zip(detection_paths, meta_paths):
        lines = Path(det_path).read_text(encoding="utf-8").splitlines()
        jobs.append((lines, Path(meta_path).read_text(encoding="utf-8")))
    with Store(store_dir or cfg.store_dir, mode="rw") as store:
        site = _resolve_site(store, site_id, site_config)
        summaries = pipeline.ingest_many(store, site, jobs, cfg.settings,
                                         parallel=parallel)
    for s in summaries:
        _echo_json(s.to_doc())


@main.command("detect")
@click.option("--site", "site_id", default=None)
@click.option("--site-config", default=None, type=click.Path(exists=True))
@click.option("--store", "store_dir", default=None, type=click.Path())
@click.option("--video", "video_id", default=None)
@click.pass_obj
@_fail_cleanly
def detect_cmd(cfg: AppConfig, site_id, site_config, store_dir, video_id):
    """Recompute braking events from stored trajectories."""
    with Store(store_dir or cfg.store_dir, mode="rw") as store:
        site = _resolve_site(store, site_id, site_config)
        _echo_json(pipeline.detect_site(store, site, cfg.settings, video_id))


@main.command("report")
@click.option("--site", "site_id", default=None)
@click.option("--site-config", default=None, type=click.Path(exists=True))
@click.option("--store", "store_dir", default=None, type=click.Path())
@click.option("--product", "products", multiple=True,
              type=click.Choice(list(analytics.PRODUCT_NAMES)),
              help="repeatable; defaults to every product")
@click.option("--format", "fmt", default="csv", show_default=True,
              type=click.Choice(["csv", "json"]))
@click.option("--hours", default="7-19", show_default=True,
              help="inclusive local-hour span for hourly stats")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_obj
@_fail_cleanly
def report_cmd(cfg: AppConfig, site_id, site_config, store_dir, products,
               fmt, hours, out_dir):
    """Render analytics products to files; reruns are byte-identical."""
    names = list(products) if products else list(analytics.PRODUCT_NAMES)
    with Store(store_dir or cfg.store_dir, mode="ro") as store:
        site = store.get_site(site_id) if site_config is None else _load_site_doc(site_config)
        if site is None:
            raise ConfigError(f"site {site_id!r} is not in the store")
        built = pipeline.build_products(store, site, names,
                                        hours=_parse_hours(hours))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = analytics.emit_report(built, fmt, out)
    _echo_json({"written": [str(p) for p in written]})


@main.command("export")
@click.option("--store", "store_dir", default=None, type=click.Path())
@click.option("--table", required=True,
              type=click.Choice(["trajectories", "events", "sites"]))
@click.option("--out", required=True, type=click.Path())
@click.pass_obj
@_fail_cleanly
def export_cmd(cfg: AppConfig, store_dir, table, out):
    """Dump a table as canonical NDJSON in key order."""
    with Store(store_dir or cfg.store_dir, mode="ro") as store:
        rows = store.export_ndjson(table, Path(out))
    _echo_json({"table": table, "rows": rows, "out": str(out)})


@main.command("serve")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.option("--store", "store_dir", default=None, type=click.Path())
@click.option("--ui", "ui_dir", default=None, type=click.Path())
@click.pass_obj
@_fail_cleanly
def serve_cmd(cfg: AppConfig, host, port, store_dir, ui_dir):
    """Run the HTTP service (holds the store's writer lock while up)."""
    import uvicorn
    from dataclasses import replace

    from .service import create_app

    if store_dir:
        cfg = replace(cfg, store_dir=store_dir)
    if ui_dir:
        cfg = replace(cfg, ui_dir=ui_dir)
    host = host or cfg.listen_host
    port = port if port is not None else cfg.listen_port
    uvicorn.run(create_app(cfg), host=host, port=port)


if __name__ == "__main__":
    main()

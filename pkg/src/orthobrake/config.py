"""Runtime configuration: built-in defaults, a JSON file, env overrides.

Precedence is environment > file > defaults. The file mirrors the
dataclass structure; environment variables cover the deployment-facing
scalars only (ORTHOBRAKE_STORE_DIR and friends), since nested tuning knobs
belong in the file where they can be reviewed.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .braking import BrakingThresholds
from .errors import ConfigError
from .homog import RobustParams
from .pipeline import IngestSettings

ENV_PREFIX = "ORTHOBRAKE_"


@dataclass(frozen=True)
class AppConfig:
    store_dir: str = "./store"
    listen_host: str = "127.0.0.1"
    listen_port: int = 8321
    imagery_endpoint: str = ""
    ui_dir: str | None = None
    utc_offset_hours: float = 0.0  # default offset stamped onto new sites
    robust: RobustParams = field(default_factory=RobustParams)
    settings: IngestSettings = field(default_factory=IngestSettings)


def _build_robust(doc: dict) -> RobustParams:
    base = RobustParams()
    try:
        return RobustParams(
            max_iterations=int(doc.get("max_iterations", base.max_iterations)),
            inlier_threshold=float(doc.get("inlier_threshold", base.inlier_threshold)),
            scoring=str(doc.get("scoring", base.scoring)),
            sigma_max=float(doc.get("sigma_max", base.sigma_max)),
            confidence=float(doc.get("confidence", base.confidence)),
            seed=int(doc.get("seed", base.seed)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad robust estimation config: {exc}") from exc


def _build_thresholds(doc: dict) -> BrakingThresholds:
    base = BrakingThresholds()
    try:
        return BrakingThresholds(
            a_trigger=float(doc.get("a_trigger", base.a_trigger)),
            robust_fraction=float(doc.get("robust_fraction", base.robust_fraction)),
            robust_percentile=float(doc.get("robust_percentile", base.robust_percentile)),
            min_duration=float(doc.get("min_duration", base.min_duration)),
            g=float(doc.get("g", base.g)),
            mild_lo=float(doc.get("mild_lo", base.mild_lo)),
            moderate_lo=float(doc.get("moderate_lo", base.moderate_lo)),
            severe_lo=float(doc.get("severe_lo", base.severe_lo)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad braking thresholds config: {exc}") from exc


def _build_settings(doc: dict, thresholds: BrakingThresholds) -> IngestSettings:
    base = IngestSettings()
    classes = doc.get("allowed_classes")
    try:
        return IngestSettings(
            min_track_len=int(doc.get("min_track_len", base.min_track_len)),
            allowed_classes=(
                frozenset(str(c) for c in classes)
                if classes is not None else base.allowed_classes
            ),
            ema_alpha=float(doc.get("ema_alpha", base.ema_alpha)),
            clamp_window_s=float(doc.get("clamp_window_s", base.clamp_window_s)),
            clamp_radius_m=float(doc.get("clamp_radius_m", base.clamp_radius_m)),
            grid_dt=float(doc.get("grid_dt", base.grid_dt)),
            merge_gap=float(doc.get("merge_gap", base.merge_gap)),
            thresholds=thresholds,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad ingest settings config: {exc}") from exc


def load_config(
    path: "str | Path | None" = None, env: Mapping = os.environ
) -> AppConfig:
    """Resolve the effective configuration.

    path may be None (defaults + env only). Unknown file keys raise so
    typos don't silently fall back to defaults.
    """
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {p}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")

    known = {
        "store_dir", "listen_host", "listen_port", "imagery_endpoint",
        "ui_dir", "utc_offset_hours", "robust", "ingest", "thresholds",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    thresholds = _build_thresholds(doc.get("thresholds", {}))
    try:
        cfg = AppConfig(
            store_dir=str(doc.get("store_dir", AppConfig.store_dir)),
            listen_host=str(doc.get("listen_host", AppConfig.listen_host)),
            listen_port=int(doc.get("listen_port", AppConfig.listen_port)),
            imagery_endpoint=str(doc.get("imagery_endpoint", AppConfig.imagery_endpoint)),
            ui_dir=(str(doc["ui_dir"]) if doc.get("ui_dir") is not None else None),
            utc_offset_hours=float(doc.get("utc_offset_hours", AppConfig.utc_offset_hours)),
            robust=_build_robust(doc.get("robust", {})),
            settings=_build_settings(doc.get("ingest", {}), thresholds),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    def _env(name: str) -> str | None:
        return env.get(ENV_PREFIX + name)

    try:
        if _env("STORE_DIR") is not None:
            cfg = replace(cfg, store_dir=_env("STORE_DIR"))
        if _env("LISTEN_HOST") is not None:
            cfg = replace(cfg, listen_host=_env("LISTEN_HOST"))
        if _env("LISTEN_PORT") is not None:
            cfg = replace(cfg, listen_port=int(_env("LISTEN_PORT")))
        if _env("IMAGERY_ENDPOINT") is not None:
            cfg = replace(cfg, imagery_endpoint=_env("IMAGERY_ENDPOINT"))
        if _env("UI_DIR") is not None:
            cfg = replace(cfg, ui_dir=_env("UI_DIR"))
        if _env("UTC_OFFSET_HOURS") is not None:
            cfg = replace(cfg, utc_offset_hours=float(_env("UTC_OFFSET_HOURS")))
        if _env("SEED") is not None:
            cfg = replace(cfg, robust=replace(cfg.robust, seed=int(_env("SEED"))))
    except ValueError as exc:
        raise ConfigError(f"bad environment override: {exc}") from exc
    return cfg

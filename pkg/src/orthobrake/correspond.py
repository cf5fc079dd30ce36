"""Point correspondences between a camera view and an orthoimage.

A correspondence set is the manual calibration artifact for one site: pairs
of (camera pixel, ortho pixel) positions picked on the same ground feature,
plus optional site annotations (stop bar, median line) drawn in world
coordinates on the ortho side.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import GeometryError, ParseError, SchemaVersionError, ValidationError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# estimation is solvable from 4 pairs; below 10 the fit tends to be fragile
MIN_PAIRS_FOR_ESTIMATION = 4
RECOMMENDED_MIN_PAIRS = 10


def _require_finite(name: str, *vals: float) -> None:
    for v in vals:
        if not math.isfinite(v):
            raise ValidationError(f"{name} has non-finite coordinate: {vals}")


@dataclass(frozen=True)
class CameraPoint:
    u: float
    v: float

    def __post_init__(self):
        _require_finite("camera point", self.u, self.v)


@dataclass(frozen=True)
class OrthoPoint:
    x: float
    y: float

    def __post_init__(self):
        _require_finite("ortho point", self.x, self.y)


@dataclass(frozen=True)
class CorrespondencePair:
    pair_id: int
    cam: CameraPoint
    ortho: OrthoPoint
    label: str | None = None


@dataclass(frozen=True)
class SiteAnnotations:
    """Site geometry in world coordinates (meters in the site CRS).

    stop_bar is a two-point segment; median_line is a polyline with at
    least two vertices; analysis_side restricts which approach is analyzed.
    """

    stop_bar: tuple[tuple[float, float], tuple[float, float]]
    median_line: tuple[tuple[float, float], ...]
    analysis_side: str = "both"  # left | right | both

    def __post_init__(self):
        (ax, ay), (bx, by) = self.stop_bar
        _require_finite("stop bar", ax, ay, bx, by)
        if ax == bx and ay == by:
            raise ValidationError("stop bar endpoints must be distinct")
        if len(self.median_line) < 2:
            raise ValidationError(
                f"median line needs at least 2 vertices, got {len(self.median_line)}"
            )
        for x, y in self.median_line:
            _require_finite("median line vertex", x, y)
        if self.analysis_side not in ("left", "right", "both"):
            raise ValidationError(f"unknown analysis side {self.analysis_side!r}")


@dataclass
class CorrespondenceSet:
    site_id: str
    camera_image_ref: str
    ortho_ref: str
    pairs: list[CorrespondencePair] = field(default_factory=list)
    annotations: SiteAnnotations | None = None

    def add_pair(
        self, cam: CameraPoint, ortho: OrthoPoint, label: str | None = None
    ) -> CorrespondencePair:
        """Append a pair with the next free id (ids count from 1) and return it."""
        next_id = max((p.pair_id for p in self.pairs), default=0) + 1
        pair = CorrespondencePair(pair_id=next_id, cam=cam, ortho=ortho, label=label)
        self.pairs.append(pair)
        return pair

    def remove_pair(self, pair_id: int) -> None:
        before = len(self.pairs)
        self.pairs = [p for p in self.pairs if p.pair_id != pair_id]
        if len(self.pairs) == before:
            raise ValidationError(f"no pair with id {pair_id}")

    def estimation_warnings(self) -> list[str]:
        """Non-fatal issues worth surfacing before estimation."""
        warnings = []
        if MIN_PAIRS_FOR_ESTIMATION <= len(self.pairs) < RECOMMENDED_MIN_PAIRS:
            warnings.append(
                f"only {len(self.pairs)} pairs; {RECOMMENDED_MIN_PAIRS} or more "
                "are recommended for a stable fit"
            )
        return warnings


def _pair_to_doc(p: CorrespondencePair) -> dict:
    doc = {
        "id": p.pair_id,
        "cam": [p.cam.u, p.cam.v],
        "ortho": [p.ortho.x, p.ortho.y],
    }
    if p.label is not None:
        doc["label"] = p.label
    return doc


def annotations_to_doc(a: SiteAnnotations) -> dict:
    return {
        "stop_bar": [list(a.stop_bar[0]), list(a.stop_bar[1])],
        "median_line": [list(v) for v in a.median_line],
        "analysis_side": a.analysis_side,
    }


def set_to_doc(cset: CorrespondenceSet) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "site_id": cset.site_id,
        "camera_image_ref": cset.camera_image_ref,
        "ortho_ref": cset.ortho_ref,
        "pairs": [_pair_to_doc(p) for p in cset.pairs],
    }
    if cset.annotations is not None:
        doc["annotations"] = annotations_to_doc(cset.annotations)
    return doc


def annotations_from_doc(doc: dict) -> SiteAnnotations:
    try:
        bar = doc["stop_bar"]
        median = doc["median_line"]
        side = doc.get("analysis_side", "both")
        return SiteAnnotations(
            stop_bar=((float(bar[0][0]), float(bar[0][1])),
                      (float(bar[1][0]), float(bar[1][1]))),
            median_line=tuple((float(x), float(y)) for x, y in median),
            analysis_side=str(side),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed annotations document: {exc}") from exc


def set_from_doc(doc: dict) -> CorrespondenceSet:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported correspondence schema_version {version!r}"
        )
    try:
        pairs = [
            CorrespondencePair(
                pair_id=int(p["id"]),
                cam=CameraPoint(float(p["cam"][0]), float(p["cam"][1])),
                ortho=OrthoPoint(float(p["ortho"][0]), float(p["ortho"][1])),
                label=p.get("label"),
            )
            for p in doc["pairs"]
        ]
        cset = CorrespondenceSet(
            site_id=str(doc["site_id"]),
            camera_image_ref=str(doc["camera_image_ref"]),
            ortho_ref=str(doc["ortho_ref"]),
            pairs=pairs,
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed correspondence document: {exc}") from exc
    ids = [p.pair_id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ParseError("correspondence document has duplicate pair ids")
    if "annotations" in doc:
        cset.annotations = annotations_from_doc(doc["annotations"])
    return cset


def save_set(cset: CorrespondenceSet, path: Path) -> None:
    Path(path).write_text(
        json.dumps(set_to_doc(cset), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_set(path: Path) -> CorrespondenceSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse correspondence file {path}: {exc}") from exc
    return set_from_doc(doc)


def _point_segment_distance(
    px: float, py: float, ax: float, ay: float, bx: float, by: float
) -> float:
    dx, dy = bx - ax, by - ay
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg_len2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


# cross products below this magnitude (m^2) count as "on the line"
ON_LINE_EPS = 1e-9


def side_of_median(annotations: SiteAnnotations, x: float, y: float) -> str:
    """Classify a world point as 'left', 'right', or 'on' the median line.

    Sides are taken relative to the nearest polyline segment, looking along
    its vertex order. A zero-length nearest segment leaves the side
    undefined and raises GeometryError.
    """
    verts = annotations.median_line
    best_i, best_d = 0, float("inf")
    for i in range(len(verts) - 1):
        (ax, ay), (bx, by) = verts[i], verts[i + 1]
        d = _point_segment_distance(x, y, ax, ay, bx, by)
        if d < best_d:
            best_i, best_d = i, d
    (ax, ay), (bx, by) = verts[best_i], verts[best_i + 1]
    if ax == bx and ay == by:
        raise GeometryError(
            f"median segment {best_i} is zero-length; side undefined"
        )
    cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
    if abs(cross) < ON_LINE_EPS:
        return "on"
    return "left" if cross > 0 else "right"


def pairs_as_arrays(pairs: Iterable[CorrespondencePair]):
    """Split pairs into parallel (cam, ortho) coordinate lists."""
    cam = [(p.cam.u, p.cam.v) for p in pairs]
    ortho = [(p.ortho.x, p.ortho.y) for p in pairs]
    return cam, ortho

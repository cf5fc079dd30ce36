"""Append-only NDJSON store for trajectories, events, and site documents.

One file per table under the store root; every line is a canonical JSON
object (sorted keys, no whitespace). An in-memory last-writer-wins index
keyed by each table's natural key is rebuilt on open, so re-ingesting the
same keys replaces earlier rows without rewriting history. A lock file
admits a single writer; read-only opens never lock.

The schema is structurally anonymous: rows hold only bounded scalars and
small numeric arrays, so imagery or other bulk payloads cannot enter the
store by construction.
"""
from __future__ import annotations

import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .errors import (
    StoreConflictError,
    StoreError,
    StoreLockError,
    StoreSchemaError,
    ValidationError,
)

log = logging.getLogger(__name__)

TABLES = ("trajectories", "events", "sites")

SEVERITY_VALUES = ("mild", "moderate", "severe")

# longest string value allowed anywhere in a row; blocks embedded blobs
MAX_STR_LEN = 4096

TRAJECTORY_KEY = ("site_id", "video_id", "track_id")
EVENT_KEY = ("site_id", "video_id", "track_id", "t_start")
SITE_KEY = ("site_id",)


def iso_utc(t: float) -> str:
    """ISO-8601 rendering of an epoch timestamp, microsecond precision."""
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat()


def _expect(row: dict, field: str, kinds, where: str):
    if field not in row:
        raise StoreSchemaError(f"{where}: missing field {field!r}")
    value = row[field]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise StoreSchemaError(
            f"{where}: field {field!r} has type {type(value).__name__}"
        )
    if isinstance(value, str) and len(value) > MAX_STR_LEN:
        raise StoreSchemaError(f"{where}: field {field!r} exceeds {MAX_STR_LEN} chars")
    return value


def _check_plain(value, where: str, depth: int = 0):
    """Allow only bounded JSON scalars/containers (structural anonymization)."""
    if depth > 6:
        raise StoreSchemaError(f"{where}: nesting too deep")
    if value is None or isinstance(value, (bool, int, float)):
        return
    if isinstance(value, str):
        if len(value) > MAX_STR_LEN:
            raise StoreSchemaError(f"{where}: string exceeds {MAX_STR_LEN} chars")
        return
    if isinstance(value, list):
        for v in value:
            _check_plain(v, where, depth + 1)
        return
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise StoreSchemaError(f"{where}: non-string key")
            _check_plain(v, where, depth + 1)
        return
    raise StoreSchemaError(f"{where}: value type {type(value).__name__} not storable")


def validate_trajectory_row(row: dict) -> dict:
    where = "trajectory row"
    allowed = {"site_id", "video_id", "track_id", "class", "point_count",
               "t_first", "t_last", "points_blob"}
    extra = set(row) - allowed
    if extra:
        raise StoreSchemaError(f"{where}: unknown fields {sorted(extra)}")
    _expect(row, "site_id", str, where)
    _expect(row, "video_id", str, where)
    _expect(row, "track_id", int, where)
    _expect(row, "class", str, where)
    count = _expect(row, "point_count", int, where)
    _expect(row, "t_first", (int, float), where)
    _expect(row, "t_last", (int, float), where)
    blob = _expect(row, "points_blob", dict, where)
    if set(blob) != {"t", "x", "y"}:
        raise StoreSchemaError(f"{where}: points_blob must have keys t, x, y")
    for axis in ("t", "x", "y"):
        series = blob[axis]
        if not isinstance(series, list) or len(series) != count:
            raise StoreSchemaError(
                f"{where}: points_blob[{axis!r}] must be a list of length {count}"
            )
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                   for v in series):
            raise StoreSchemaError(f"{where}: points_blob[{axis!r}] must be numeric")
    return row


def validate_event_row(row: dict) -> dict:
    where = "event row"
    allowed = {"site_id", "video_id", "track_id", "t_start", "t_end", "duration",
               "a_bar", "a_robust", "peak_decel", "r_start", "mean_easting",
               "mean_northing", "severity", "t_start_iso", "t_end_iso"}
    extra = set(row) - allowed
    if extra:
        raise StoreSchemaError(f"{where}: unknown fields {sorted(extra)}")
    _expect(row, "site_id", str, where)
    _expect(row, "video_id", str, where)
    _expect(row, "track_id", int, where)
    for field in ("t_start", "t_end", "duration", "a_bar", "a_robust",
                  "peak_decel", "r_start", "mean_easting", "mean_northing"):
        _expect(row, field, (int, float), where)
    sev = _expect(row, "severity", str, where)
    if sev not in SEVERITY_VALUES:
        raise StoreSchemaError(f"{where}: severity {sev!r} not in {SEVERITY_VALUES}")
    _expect(row, "t_start_iso", str, where)
    _expect(row, "t_end_iso", str, where)
    return row


def validate_site_row(row: dict) -> dict:
    where = "site row"
    _expect(row, "site_id", str, where)
    _check_plain(row, where)
    return row


_VALIDATORS = {
    "trajectories": validate_trajectory_row,
    "events": validate_event_row,
    "sites": validate_site_row,
}

_KEYS = {
    "trajectories": TRAJECTORY_KEY,
    "events": EVENT_KEY,
    "sites": SITE_KEY,
}


def _row_key(table: str, row: dict) -> tuple:
    return tuple(row[f] for f in _KEYS[table])


def canonical_line(row: dict) -> str:
    return json.dumps(row, sort_keys=True, separators=(",", ":"))


class Store:
    """Single-writer NDJSON store rooted at a directory.

    mode "rw" acquires the lock file and allows puts; "ro" opens without a
    lock for concurrent readers. Use as a context manager or call close().
    """

    def __init__(self, root: Path, mode: str = "rw"):
        if mode not in ("rw", "ro"):
            raise ValidationError(f"store mode must be rw or ro, got {mode!r}")
        self.root = Path(root)
        self.mode = mode
        self._lock_fd: int | None = None
        self._index: dict[str, dict[tuple, dict]] = {t: {} for t in TABLES}
        self.root.mkdir(parents=True, exist_ok=True)
        if mode == "rw":
            self._acquire_lock()
        try:
            for table in TABLES:
                self._replay(table)
        except BaseException:
            self._release_lock()
            raise

    # -- lifecycle -----------------------------------------------------

    def _lock_path(self) -> Path:
        return self.root / ".lock"

    def _acquire_lock(self):
        path = self._lock_path()
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            holder = ""
            try:
                holder = path.read_text().strip()
            except OSError:
                pass
            raise StoreLockError(
                f"store {self.root} is locked by pid {holder or 'unknown'}; "
                f"remove {path} if that process is gone"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        self._lock_fd = fd

    def _release_lock(self):
        if self._lock_fd is not None:
            os.close(self._lock_fd)
            self._lock_fd = None
            try:
                self._lock_path().unlink()
            except OSError:
                pass

    def close(self):
        self._release_lock()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc):
        self.close()

    # -- persistence ---------------------------------------------------

    def _table_path(self, table: str) -> Path:
        if table not in TABLES:
            raise ValidationError(f"unknown table {table!r}")
        return self.root / f"{table}.ndjson"

    def _replay(self, table: str):
        path = self._table_path(table)
        if not path.exists():
            return
        index = self._index[table]
        raw = path.read_bytes()
        if not raw:
            return
        lines = raw.split(b"\n")
        trailing_complete = raw.endswith(b"\n")
        if trailing_complete:
            lines = lines[:-1]
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            last = i == len(lines) - 1
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("row is not an object")
            except ValueError as exc:
                if last and not trailing_complete:
                    log.warning(
                        "%s: ignoring truncated final line (%s)", path, exc
                    )
                    continue
                raise StoreError(f"{path} line {i + 1} is corrupt: {exc}") from exc
            if "_delete" in obj:
                index.pop(tuple(obj["_delete"]), None)
                continue
            try:
                _VALIDATORS[table](obj)
            except StoreSchemaError as exc:
                raise StoreError(f"{path} line {i + 1}: {exc}") from exc
            index[_row_key(table, obj)] = obj

    def _append(self, table: str, lines: Iterable[str]):
        if self.mode != "rw":
            raise StoreError("store opened read-only")
        with open(self._table_path(table), "a", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _put(self, table: str, batch: "list[dict]") -> int:
        validator = _VALIDATORS[table]
        staged: dict[tuple, dict] = {}
        conflicts = []
        for row in batch:
            validator(row)
            key = _row_key(table, row)
            if key in staged and staged[key] != row:
                conflicts.append(key)
            staged[key] = row
        if conflicts:
            raise StoreConflictError(
                f"batch carries conflicting payloads for keys: {sorted(conflicts)}"
            )
        self._append(table, (canonical_line(r) for r in staged.values()))
        self._index[table].update(staged)
        return len(staged)

    # -- writes ----------------------------------------------------------

    def put_trajectories(self, batch: "list[dict]") -> int:
        return self._put("trajectories", batch)

    def put_events(self, batch: "list[dict]") -> int:
        return self._put("events", batch)

    def put_site(self, row: dict) -> None:
        self._put("sites", [row])

    def _delete_scope(self, table: str, site_id: str, video_id: str | None,
                      track_id: int | None) -> int:
        victims = [
            key for key, row in self._index[table].items()
            if row["site_id"] == site_id
            and (video_id is None or row["video_id"] == video_id)
            and (track_id is None or row["track_id"] == track_id)
        ]
        if victims:
            self._append(
                table,
                (canonical_line({"_delete": list(key)}) for key in sorted(victims)),
            )
        for key in victims:
            self._index[table].pop(key)
        return len(victims)

    def delete_events(self, site_id: str, video_id: str | None = None,
                      track_id: int | None = None) -> int:
        """Tombstone stored events in scope; returns how many were removed."""
        return self._delete_scope("events", site_id, video_id, track_id)

    def delete_trajectories(self, site_id: str, video_id: str | None = None,
                            track_id: int | None = None) -> int:
        """Tombstone stored trajectories in scope (re-ingest housekeeping)."""
        return self._delete_scope("trajectories", site_id, video_id, track_id)

    # -- reads -----------------------------------------------------------

    def get_site(self, site_id: str) -> dict | None:
        return self._index["sites"].get((site_id,))

    def list_sites(self) -> "list[dict]":
        return [self._index["sites"][k] for k in sorted(self._index["sites"])]

    def query_trajectories(
        self, site_id: str, video_id: str | None = None
    ) -> "list[dict]":
        if (site_id,) not in self._index["sites"]:
            log.warning("query for unknown site %r", site_id)
        rows = [
            row for row in self._index["trajectories"].values()
            if row["site_id"] == site_id
            and (video_id is None or row["video_id"] == video_id)
        ]
        rows.sort(key=lambda r: (r["video_id"], r["track_id"]))
        return rows

    def query_events(
        self,
        site_id: str,
        t_from: float = float("-inf"),
        t_to: float = float("inf"),
        severity: str | None = None,
    ) -> "list[dict]":
        """Events with t_from <= t_start <= t_to, optionally one severity."""
        if t_from > t_to:
            raise ValidationError(f"t_from {t_from} > t_to {t_to}")
        if severity is not None and severity not in SEVERITY_VALUES:
            raise ValidationError(f"unknown severity filter {severity!r}")
        if (site_id,) not in self._index["sites"]:
            log.warning("query for unknown site %r", site_id)
        rows = [
            row for row in self._index["events"].values()
            if row["site_id"] == site_id
            and t_from <= row["t_start"] <= t_to
            and (severity is None or row["severity"] == severity)
        ]
        rows.sort(key=lambda r: (r["t_start"], r["track_id"]))
        return rows

    # -- export ----------------------------------------------------------

    def export_ndjson(self, table: str, path: Path) -> int:
        """Write the live rows of a table in key order; returns row count.

        Lines are canonical JSON, so identical store contents export to
        byte-identical files regardless of ingestion history.
        """
        if table not in TABLES:
            raise ValidationError(f"unknown table {table!r}")
        out = Path(path)
        keys = sorted(self._index[table])
        with open(out, "w", encoding="utf-8") as fh:
            for key in keys:
                fh.write(canonical_line(self._index[table][key]) + "\n")
        return len(keys)

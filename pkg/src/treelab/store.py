"""Relational tree store: one sqlite file per deployment.

Holds the per-project tree records plus the deployment's bookkeeping
tables (projects, detections, knowledge chunks, chat sessions). Analysis
access goes through :class:`StructuredQuery` — a declarative, whitelisted
query shape compiled to parameterized SQL — never through raw query
strings, so agent-issued queries are deterministic and injection-safe.

Grouped queries bucket a numeric column into ``[k*b, (k+1)*b)`` bins and
return one row per non-empty bin, ascending; ``order_by`` is only
meaningful for ungrouped queries. ``std`` is the population standard
deviation. Row order ties always break by tree_id ascending.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NotFoundError, QueryError, TreelabError
from .factors import GeoTransform, TreeFactors
from .geometry import Bbox, RleMask, rle_to_compact_string

SCHEMA_VERSION = 1

QUERY_COLUMNS = (
    "tree_id", "pos_col", "pos_row", "height_m", "crown_width_m",
    "support_height_m", "crown_area_m2", "fallback",
)

_OPS = {"=": "=", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}
_OP_ALIASES = {"≠": "!=", "≤": "<=", "≥": ">=", "==": "="}

_AGGREGATES = ("count", "mean", "min", "max", "std")


class ValidationError(TreelabError):
    """A record violated a store invariant; carries the record index."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class TreeRecord:
    """One tree: position in pixel coordinates, box, compressed contour,
    structural factors, and the selection fallback flag."""

    tree_id: int
    project_id: str
    pos_col: float
    pos_row: float
    bbox: Bbox
    contour: RleMask
    factors: TreeFactors
    fallback: bool

    def __post_init__(self):
        if self.tree_id < 1:
            raise ValidationError(f"tree_id must be positive, got {self.tree_id}")
        cx, cy = self.bbox.centroid()
        if abs(cx - self.pos_col) > 1e-6 or abs(cy - self.pos_row) > 1e-6:
            raise ValidationError(
                f"position ({self.pos_col},{self.pos_row}) is not the bbox "
                f"centroid ({cx},{cy})"
            )

    def to_json(self) -> dict:
        return {
            "tree_id": self.tree_id,
            "project_id": self.project_id,
            "pos_col": self.pos_col,
            "pos_row": self.pos_row,
            "bbox": self.bbox.as_list(),
            "contour": self.contour.to_json(compact=True),
            "factors": self.factors.to_json(),
            "fallback": self.fallback,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TreeRecord":
        return cls(
            tree_id=int(obj["tree_id"]),
            project_id=str(obj["project_id"]),
            pos_col=float(obj["pos_col"]),
            pos_row=float(obj["pos_row"]),
            bbox=Bbox.from_list(obj["bbox"]),
            contour=RleMask.from_json(obj["contour"]),
            factors=TreeFactors.from_json(obj["factors"]),
            fallback=bool(obj["fallback"]),
        )


@dataclass(frozen=True)
class StructuredQuery:
    """Declarative read query over the tree table."""

    columns: tuple[str, ...] = QUERY_COLUMNS
    filters: tuple[tuple[str, str, object], ...] = ()
    order_by: tuple[str, str] | None = None  # (column, "asc"|"desc")
    limit: int | None = None
    group_by: tuple[str, float] | None = None  # (column, bin_width)
    aggregate: str | None = None

    def validate(self) -> None:
        for c in self.columns:
            if c not in QUERY_COLUMNS:
                raise QueryError(f"unknown column {c!r}")
        for col, op, _ in self.filters:
            if col not in QUERY_COLUMNS:
                raise QueryError(f"unknown column {col!r} in filter")
            if _OP_ALIASES.get(op, op) not in _OPS:
                raise QueryError(f"unknown operator {op!r}")
        if self.order_by is not None:
            col, direction = self.order_by
            if col not in QUERY_COLUMNS:
                raise QueryError(f"unknown column {col!r} in order_by")
            if direction not in ("asc", "desc"):
                raise QueryError(f"order direction must be asc or desc, got {direction!r}")
        if self.limit is not None and self.limit < 1:
            raise QueryError(f"limit must be positive, got {self.limit}")
        if self.group_by is not None:
            col, width = self.group_by
            if col not in QUERY_COLUMNS:
                raise QueryError(f"unknown column {col!r} in group_by")
            if not width > 0:
                raise QueryError(f"bin width must be positive, got {width}")
            if self.aggregate is None:
                raise QueryError("group_by requires an aggregate")
        if self.aggregate is not None:
            if self.aggregate not in _AGGREGATES:
                raise QueryError(f"unknown aggregate {self.aggregate!r}")
            if self.aggregate != "count" and not self.columns:
                raise QueryError(f"aggregate {self.aggregate!r} needs a target column")

    def to_json(self) -> dict:
        out: dict = {"columns": list(self.columns)}
        if self.filters:
            out["filters"] = [list(f) for f in self.filters]
        if self.order_by:
            out["order_by"] = list(self.order_by)
        if self.limit is not None:
            out["limit"] = self.limit
        if self.group_by:
            out["group_by"] = list(self.group_by)
        if self.aggregate:
            out["aggregate"] = self.aggregate
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "StructuredQuery":
        try:
            return cls(
                columns=tuple(obj.get("columns", QUERY_COLUMNS)),
                filters=tuple((f[0], f[1], f[2]) for f in obj.get("filters", ())),
                order_by=tuple(obj["order_by"]) if obj.get("order_by") else None,
                limit=obj.get("limit"),
                group_by=(obj["group_by"][0], float(obj["group_by"][1]))
                if obj.get("group_by") else None,
                aggregate=obj.get("aggregate"),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise QueryError(f"malformed query document: {exc}") from exc


@dataclass(frozen=True)
class QueryResult:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def to_json(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT);
CREATE TABLE IF NOT EXISTS projects (
    project_id TEXT PRIMARY KEY,
    image_path TEXT, width INTEGER, height INTEGER,
    origin_x REAL, origin_y REAL, pixel_size REAL,
    cloud_path TEXT, status TEXT
);
CREATE TABLE IF NOT EXISTS detections (
    project_id TEXT, x_min REAL, y_min REAL, x_max REAL, y_max REAL,
    score REAL, source TEXT,
    UNIQUE (project_id, x_min, y_min, x_max, y_max)
);
CREATE TABLE IF NOT EXISTS trees (
    project_id TEXT, tree_id INTEGER,
    pos_col REAL, pos_row REAL,
    x_min REAL, y_min REAL, x_max REAL, y_max REAL,
    contour TEXT, contour_height INTEGER, contour_width INTEGER,
    height_m REAL, crown_width_m REAL, support_height_m REAL,
    crown_area_m2 REAL, point_count INTEGER, fallback INTEGER,
    PRIMARY KEY (project_id, tree_id)
);
CREATE TABLE IF NOT EXISTS kb_chunks (
    chunk_id INTEGER PRIMARY KEY,
    doc_id TEXT, text TEXT, token_count INTEGER,
    dim INTEGER, embedding BLOB
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id INTEGER PRIMARY KEY AUTOINCREMENT,
    project_id TEXT
);
CREATE TABLE IF NOT EXISTS messages (
    session_id INTEGER, seq INTEGER, instruction TEXT, trace TEXT,
    PRIMARY KEY (session_id, seq)
);
"""


class TreeStore:
    """Single-file relational store; safe for many readers, writes are
    serialized through an internal lock."""

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._write_lock = threading.Lock()
        with self._conn:
            self._conn.executescript(_SCHEMA)
            row = self._conn.execute(
                "SELECT value FROM meta WHERE key='schema_version'").fetchone()
            if row is None:
                self._conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?)",
                    (str(SCHEMA_VERSION),))
            elif int(row[0]) != SCHEMA_VERSION:
                raise TreelabError(
                    f"database schema version {row[0]} unsupported "
                    f"(expected {SCHEMA_VERSION})")

    def close(self) -> None:
        self._conn.close()

    @property
    def schema_version(self) -> int:
        row = self._conn.execute(
            "SELECT value FROM meta WHERE key='schema_version'").fetchone()
        return int(row[0])

    # -- trees -------------------------------------------------------------

    def upsert_trees(self, project_id: str, records: list[TreeRecord]) -> int:
        """Idempotent by (project_id, tree_id): existing rows are fully
        replaced. The whole batch is validated before anything is written."""
        dims = self._project_dims(project_id)
        seen: set[int] = set()
        for i, rec in enumerate(records):
            if not isinstance(rec, TreeRecord):
                raise ValidationError(f"record {i} is not a TreeRecord", index=i)
            if rec.project_id != project_id:
                raise ValidationError(
                    f"record {i} belongs to project {rec.project_id!r}, "
                    f"not {project_id!r}", index=i)
            if rec.tree_id in seen:
                raise ValidationError(f"record {i} repeats tree_id {rec.tree_id}", index=i)
            seen.add(rec.tree_id)
            if dims and (rec.contour.height, rec.contour.width) != dims:
                raise ValidationError(
                    f"record {i} contour is {rec.contour.height}x{rec.contour.width}, "
                    f"project image is {dims[0]}x{dims[1]}", index=i)
        with self._write_lock, self._conn:
            self._conn.executemany(
                "INSERT OR REPLACE INTO trees VALUES "
                "(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                [
                    (
                        project_id, rec.tree_id, rec.pos_col, rec.pos_row,
                        rec.bbox.x_min, rec.bbox.y_min, rec.bbox.x_max, rec.bbox.y_max,
                        rle_to_compact_string(rec.contour),
                        rec.contour.height, rec.contour.width,
                        rec.factors.height_m, rec.factors.crown_width_m,
                        rec.factors.support_height_m, rec.factors.crown_area_m2,
                        rec.factors.point_count, int(rec.fallback),
                    )
                    for rec in records
                ],
            )
        return len(records)

    def delete_trees(self, project_id: str) -> None:
        with self._write_lock, self._conn:
            self._conn.execute("DELETE FROM trees WHERE project_id=?", (project_id,))

    def tree_count(self, project_id: str) -> int:
        row = self._conn.execute(
            "SELECT COUNT(*) FROM trees WHERE project_id=?", (project_id,)).fetchone()
        return int(row[0])

    def query(self, project_id: str, q: StructuredQuery) -> QueryResult:
        q.validate()
        where = ["project_id = ?"]
        params: list = [project_id]
        for col, op, value in q.filters:
            op = _OP_ALIASES.get(op, op)
            if col == "fallback" and isinstance(value, bool):
                value = int(value)
            where.append(f"{col} {_OPS[op]} ?")
            params.append(value)
        where_sql = " AND ".join(where)

        if q.group_by is not None or q.aggregate is not None:
            return self._aggregate_query(q, where_sql, params)

        cols = q.columns or QUERY_COLUMNS
        order = "tree_id ASC"
        if q.order_by is not None:
            col, direction = q.order_by
            order = f"{col} {direction.upper()}, tree_id ASC"
        sql = (f"SELECT {', '.join(cols)} FROM trees WHERE {where_sql} "
               f"ORDER BY {order}")
        if q.limit is not None:
            sql += f" LIMIT {int(q.limit)}"
        rows = self._conn.execute(sql, params).fetchall()
        rows = tuple(self._convert_row(cols, r) for r in rows)
        return QueryResult(columns=tuple(cols), rows=rows)

    def _aggregate_query(self, q: StructuredQuery, where_sql: str, params: list) -> QueryResult:
        target = q.columns[0] if q.columns else "tree_id"
        if q.group_by is None:
            values = [r[0] for r in self._conn.execute(
                f"SELECT {target} FROM trees WHERE {where_sql} ORDER BY tree_id",
                params)]
            label = "count" if q.aggregate == "count" else f"{q.aggregate}_{target}"
            return QueryResult((label,), ((self._agg(q.aggregate, values),),))

        group_col, width = q.group_by
        rows = self._conn.execute(
            f"SELECT {group_col}, {target} FROM trees WHERE {where_sql} "
            f"ORDER BY tree_id", params).fetchall()
        bins: dict[int, list] = {}
        for gval, tval in rows:
            k = int(np.floor(float(gval) / width))
            bins.setdefault(k, []).append(tval)
        label = "count" if q.aggregate == "count" else f"{q.aggregate}_{target}"
        out = [(k * width, self._agg(q.aggregate, vals))
               for k, vals in sorted(bins.items())]
        if q.limit is not None:
            out = out[:q.limit]
        return QueryResult((f"{group_col}_bin", label), tuple(out))

    @staticmethod
    def _agg(aggregate: str, values: list) -> float | int:
        if aggregate == "count":
            return len(values)
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            raise QueryError("aggregate over empty selection")
        if aggregate == "mean":
            return float(arr.mean())
        if aggregate == "min":
            return float(arr.min())
        if aggregate == "max":
            return float(arr.max())
        return float(arr.std())  # population std

    @staticmethod
    def _convert_row(cols, row) -> tuple:
        return tuple(
            bool(v) if c == "fallback" else v for c, v in zip(cols, row)
        )

    def export_trees(self, project_id: str) -> list[dict]:
        """All records of a project as JSON objects; round-trips losslessly
        through :meth:`import_trees`."""
        if not self.has_project(project_id) and self.tree_count(project_id) == 0:
            raise NotFoundError(f"unknown project {project_id!r}")
        rows = self._conn.execute(
            "SELECT tree_id, pos_col, pos_row, x_min, y_min, x_max, y_max, "
            "contour, contour_height, contour_width, height_m, crown_width_m, "
            "support_height_m, crown_area_m2, point_count, fallback "
            "FROM trees WHERE project_id=? ORDER BY tree_id", (project_id,)).fetchall()
        out = []
        for r in rows:
            out.append({
                "tree_id": r[0],
                "project_id": project_id,
                "pos_col": r[1],
                "pos_row": r[2],
                "bbox": [r[3], r[4], r[5], r[6]],
                "contour": {"size": [r[8], r[9]], "counts": r[7]},
                "factors": {
                    "height_m": r[10], "crown_width_m": r[11],
                    "support_height_m": r[12], "crown_area_m2": r[13],
                    "point_count": r[14],
                },
                "fallback": bool(r[15]),
            })
        return out

    def import_trees(self, project_id: str, docs: list[dict]) -> int:
        records = [TreeRecord.from_json(d) for d in docs]
        return self.upsert_trees(project_id, records)

    def get_records(self, project_id: str) -> list[TreeRecord]:
        return [TreeRecord.from_json(d) for d in self.export_trees(project_id)]

    # -- projects ----------------------------------------------------------

    def put_project(self, project_id: str, image_path: str, width: int, height: int,
                    gt: GeoTransform, cloud_path: str, status: str = "ingested") -> None:
        with self._write_lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO projects VALUES (?,?,?,?,?,?,?,?,?)",
                (project_id, image_path, width, height,
                 gt.origin_x, gt.origin_y, gt.pixel_size, cloud_path, status))

    def get_project(self, project_id: str) -> dict:
        row = self._conn.execute(
            "SELECT * FROM projects WHERE project_id=?", (project_id,)).fetchone()
        if row is None:
            raise NotFoundError(f"unknown project {project_id!r}")
        return {
            "project_id": row[0], "image_path": row[1],
            "width": row[2], "height": row[3],
            "geotransform": {"origin_x": row[4], "origin_y": row[5], "pixel_size": row[6]},
            "cloud_path": row[7], "status": row[8],
        }

    def has_project(self, project_id: str) -> bool:
        return self._conn.execute(
            "SELECT 1 FROM projects WHERE project_id=?", (project_id,)).fetchone() is not None

    def list_projects(self) -> list[dict]:
        ids = [r[0] for r in self._conn.execute(
            "SELECT project_id FROM projects ORDER BY project_id")]
        return [self.get_project(pid) for pid in ids]

    def set_project_status(self, project_id: str, status: str) -> None:
        with self._write_lock, self._conn:
            self._conn.execute("UPDATE projects SET status=? WHERE project_id=?",
                               (status, project_id))

    def _project_dims(self, project_id: str) -> tuple[int, int] | None:
        row = self._conn.execute(
            "SELECT height, width FROM projects WHERE project_id=?",
            (project_id,)).fetchone()
        return (int(row[0]), int(row[1])) if row else None

    # -- detections ----------------------------------------------------------

    def add_detections(self, project_id: str, boxes: list[Bbox],
                       scores: list[float] | None = None, source: str = "manual") -> int:
        """Idempotent by exact box coordinates; returns boxes newly stored."""
        added = 0
        with self._write_lock, self._conn:
            for i, b in enumerate(boxes):
                score = scores[i] if scores is not None else None
                cur = self._conn.execute(
                    "INSERT OR IGNORE INTO detections VALUES (?,?,?,?,?,?,?)",
                    (project_id, b.x_min, b.y_min, b.x_max, b.y_max, score, source))
                added += cur.rowcount
        return added

    def get_detections(self, project_id: str) -> list[Bbox]:
        rows = self._conn.execute(
            "SELECT x_min, y_min, x_max, y_max FROM detections "
            "WHERE project_id=? ORDER BY rowid", (project_id,)).fetchall()
        return [Bbox(*r) for r in rows]

    def clear_detections(self, project_id: str) -> None:
        with self._write_lock, self._conn:
            self._conn.execute("DELETE FROM detections WHERE project_id=?", (project_id,))

    # -- knowledge chunks ----------------------------------------------------

    def add_kb_chunks(self, rows: list[tuple[int, str, str, int, int, bytes]]) -> None:
        with self._write_lock, self._conn:
            self._conn.executemany(
                "INSERT OR REPLACE INTO kb_chunks VALUES (?,?,?,?,?,?)", rows)

    def kb_rows(self) -> list[tuple[int, str, str, int, int, bytes]]:
        return self._conn.execute(
            "SELECT chunk_id, doc_id, text, token_count, dim, embedding "
            "FROM kb_chunks ORDER BY chunk_id").fetchall()

    def next_kb_chunk_id(self) -> int:
        row = self._conn.execute("SELECT MAX(chunk_id) FROM kb_chunks").fetchone()
        return (row[0] or 0) + 1

    # -- chat sessions ---------------------------------------------------------

    def create_session(self, project_id: str) -> int:
        with self._write_lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO sessions (project_id) VALUES (?)", (project_id,))
            return int(cur.lastrowid)

    def session_project(self, session_id: int) -> str:
        row = self._conn.execute(
            "SELECT project_id FROM sessions WHERE session_id=?", (session_id,)).fetchone()
        if row is None:
            raise NotFoundError(f"unknown session {session_id}")
        return row[0]

    def append_message(self, session_id: int, instruction: str, trace: dict) -> int:
        with self._write_lock, self._conn:
            row = self._conn.execute(
                "SELECT COALESCE(MAX(seq), 0) FROM messages WHERE session_id=?",
                (session_id,)).fetchone()
            seq = int(row[0]) + 1
            self._conn.execute(
                "INSERT INTO messages VALUES (?,?,?,?)",
                (session_id, seq, instruction, json.dumps(trace)))
            return seq

    def session_messages(self, session_id: int) -> list[dict]:
        rows = self._conn.execute(
            "SELECT seq, instruction, trace FROM messages WHERE session_id=? "
            "ORDER BY seq", (session_id,)).fetchall()
        return [{"seq": r[0], "instruction": r[1], "trace": json.loads(r[2])}
                for r in rows]

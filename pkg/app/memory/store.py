"""
Run store: SQLite-backed persistence for every run the service executes.

Provides:
  - save_run()   : Upsert a run record (request, status, report, events)
  - get_run()    : Fetch one run by ID
  - list_runs()  : Paginated list with status/stage filters
  - get_stats()  : Summary counts and averages

Configure via .env:
    PARALLAX_STATE_DIR=/tmp   directory holding parallax_runs.db
"""

from __future__ import annotations
import json
import os
import sqlite3
from contextlib import closing, contextmanager
from pathlib import Path
from typing import Any, Iterator

_JSON_FIELDS = ("request", "report", "events")


def db_path() -> Path:
    return Path(os.getenv("PARALLAX_STATE_DIR", "/tmp")) / "parallax_runs.db"


@contextmanager
def _connect() -> Iterator[sqlite3.Connection]:
    """One connection per call: committed on success, always closed."""
    path = db_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with closing(sqlite3.connect(str(path))) as conn:
        conn.row_factory = sqlite3.Row
        with conn:
            yield conn


def init_db() -> None:
    """Create tables if they don't exist."""
    with _connect() as conn:
        conn.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id TEXT PRIMARY KEY,
                preset TEXT,
                stage TEXT,
                status TEXT DEFAULT 'pending',
                total_loss REAL,
                abs_rel REAL,
                abs_rel_median REAL,
                recovered_scale REAL,
                request TEXT DEFAULT '{}',
                report TEXT DEFAULT '{}',
                events TEXT DEFAULT '[]',
                error TEXT DEFAULT '',
                started_at TEXT,
                completed_at TEXT,
                created_at TEXT DEFAULT (datetime('now'))
            )
        """)
        conn.execute("CREATE INDEX IF NOT EXISTS idx_status ON runs(status)")
        conn.execute("CREATE INDEX IF NOT EXISTS idx_stage ON runs(stage)")
        conn.execute("CREATE INDEX IF NOT EXISTS idx_created ON runs(created_at)")
        conn.commit()


def save_run(record: dict[str, Any]) -> None:
    """Upsert a run; only the id is required."""
    init_db()
    with _connect() as conn:
        conn.execute("""
            INSERT INTO runs (
                id, preset, stage, status, total_loss, abs_rel, abs_rel_median,
                recovered_scale, request, report, events, error, started_at, completed_at
            ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            ON CONFLICT(id) DO UPDATE SET
                status = excluded.status,
                total_loss = excluded.total_loss,
                abs_rel = excluded.abs_rel,
                abs_rel_median = excluded.abs_rel_median,
                recovered_scale = excluded.recovered_scale,
                report = excluded.report,
                events = excluded.events,
                error = excluded.error,
                completed_at = excluded.completed_at
        """, (
            record["id"],
            record.get("preset", ""),
            record.get("stage", ""),
            record.get("status", "pending"),
            record.get("total_loss"),
            record.get("abs_rel"),
            record.get("abs_rel_median"),
            record.get("recovered_scale"),
            json.dumps(record.get("request", {})),
            json.dumps(record.get("report", {})),
            json.dumps(record.get("events", [])),
            record.get("error", ""),
            record.get("started_at", ""),
            record.get("completed_at", ""),
        ))
        conn.commit()


def get_run(run_id: str) -> dict[str, Any] | None:
    init_db()
    with _connect() as conn:
        row = conn.execute("SELECT * FROM runs WHERE id = ?", (run_id,)).fetchone()
        return _row_to_dict(row) if row else None


def list_runs(limit: int = 50, offset: int = 0, status: str | None = None,
              stage: str | None = None) -> list[dict[str, Any]]:
    init_db()
    query = "SELECT * FROM runs WHERE 1 = 1"
    params: list[Any] = []
    if status:
        query += " AND status = ?"
        params.append(status)
    if stage:
        query += " AND stage = ?"
        params.append(stage)
    query += " ORDER BY created_at DESC, rowid DESC LIMIT ? OFFSET ?"
    params += [limit, offset]
    with _connect() as conn:
        return [_row_to_dict(r) for r in conn.execute(query, params).fetchall()]


def get_stats() -> dict[str, Any]:
    init_db()
    with _connect() as conn:
        total = conn.execute("SELECT COUNT(*) FROM runs").fetchone()[0]
        by_status = {
            row["status"]: row["count"]
            for row in conn.execute("SELECT status, COUNT(*) as count FROM runs GROUP BY status").fetchall()
        }
        by_stage = {
            row["stage"]: row["count"]
            for row in conn.execute("SELECT stage, COUNT(*) as count FROM runs GROUP BY stage").fetchall()
        }
        avg = conn.execute(
            "SELECT AVG(total_loss), AVG(abs_rel_median) FROM runs WHERE status = 'complete'"
        ).fetchone()
        recent = conn.execute("SELECT * FROM runs ORDER BY created_at DESC, rowid DESC LIMIT 5").fetchall()
        return {
            "total": total,
            "by_status": by_status,
            "by_stage": by_stage,
            "avg_total_loss": avg[0],
            "avg_abs_rel_median": avg[1],
            "recent_runs": [_row_to_dict(r) for r in recent],
        }


def _row_to_dict(row: sqlite3.Row) -> dict[str, Any]:
    d = dict(row)
    for field in _JSON_FIELDS:
        default = [] if field == "events" else {}
        try:
            d[field] = json.loads(d.get(field) or json.dumps(default))
        except (json.JSONDecodeError, TypeError):
            d[field] = default
    return d

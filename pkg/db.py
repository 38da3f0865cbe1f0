from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any
from uuid import uuid4

from sqlmodel import Field, Session, SQLModel, create_engine, select

STATUS_RUNNING = "running"
STATUS_OK = "ok"
STATUS_FAILED = "failed"


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


# ---------------------------------------------------------------------------
# DTO dataclasses (documentation of dict shapes returned to main.py)
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    id: str
    command: str
    config_hash: str
    seed: int
    version: str
    status: str
    summary: dict[str, Any]
    created_at: str


@dataclass
class ReportRecord:
    id: str
    run_id: str
    experiment: str
    verdict: str
    rows: list[dict[str, Any]]
    created_at: str


# ---------------------------------------------------------------------------
# SQLModel table classes (internal ORM; never leaked to callers)
# ---------------------------------------------------------------------------


class RunModel(SQLModel, table=True):
    __tablename__ = "runs"
    id: str = Field(primary_key=True)
    command: str
    config_hash: str = Field(index=True)
    seed: str  # u64 seeds overflow SQLite INTEGER
    version: str
    status: str
    summary_json: str = "{}"
    created_at: str


class ReportModel(SQLModel, table=True):
    __tablename__ = "reports"
    id: str = Field(primary_key=True)
    run_id: str = Field(index=True)
    experiment: str
    verdict: str
    rows_json: str
    created_at: str


def _run_dict(row: RunModel) -> dict[str, Any]:
    return {
        "id": row.id,
        "command": row.command,
        "config_hash": row.config_hash,
        "seed": int(row.seed),
        "version": row.version,
        "status": row.status,
        "summary": json.loads(row.summary_json),
        "created_at": row.created_at,
    }


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


class SqliteRunLedger:
    """SQLite-backed provenance ledger: one row per CLI run, one per convergence report."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        url = f"sqlite:///{self.path}"
        self.engine = create_engine(url, connect_args={"check_same_thread": False})
        SQLModel.metadata.create_all(self.engine)
        self._verify_schema()

    def _verify_schema(self) -> None:
        """Drop and recreate tables if the existing schema is incompatible."""
        try:
            with Session(self.engine) as session:
                session.exec(select(RunModel).limit(1)).all()
                session.exec(select(ReportModel).limit(1)).all()
        except Exception:
            SQLModel.metadata.drop_all(self.engine)
            SQLModel.metadata.create_all(self.engine)

    # ------------------------------------------------------------------
    # Run ops
    # ------------------------------------------------------------------

    def record_run(self, command: str, config_hash: str, seed: int, version: str) -> dict[str, Any]:
        row = RunModel(
            id=str(uuid4()),
            command=command,
            config_hash=config_hash,
            seed=str(seed),
            version=version,
            status=STATUS_RUNNING,
            summary_json="{}",
            created_at=_utc_now_iso(),
        )
        with Session(self.engine) as session:
            session.add(row)
            session.commit()
            session.refresh(row)
            return _run_dict(row)

    def finish_run(self, run_id: str, status: str, summary: dict[str, Any] | None = None) -> dict[str, Any]:
        with Session(self.engine) as session:
            row = session.get(RunModel, run_id)
            if row is None:
                raise KeyError(f"Unknown run_id: {run_id}")
            row.status = status
            row.summary_json = json.dumps(summary or {}, sort_keys=True, default=str)
            session.add(row)
            session.commit()
            session.refresh(row)
            return _run_dict(row)

    def get_run(self, run_id: str) -> dict[str, Any] | None:
        with Session(self.engine) as session:
            row = session.get(RunModel, run_id)
            return None if row is None else _run_dict(row)

    def list_runs(self, config_hash: str | None = None, limit: int = 20) -> list[dict[str, Any]]:
        """Newest first."""
        with Session(self.engine) as session:
            stmt = select(RunModel)
            if config_hash is not None:
                stmt = stmt.where(RunModel.config_hash == config_hash)
            rows = session.exec(stmt).all()
            items = [_run_dict(row) for row in rows]
        # created_at has one-second resolution; rowid order breaks ties.
        order = {item["id"]: i for i, item in enumerate(items)}
        items.sort(key=lambda r: (r["created_at"], order[r["id"]]), reverse=True)
        return items[:limit]

    # ------------------------------------------------------------------
    # Report ops
    # ------------------------------------------------------------------

    def record_report(self, run_id: str, experiment: str, verdict: str, rows: list[dict[str, Any]]) -> dict[str, Any]:
        now = _utc_now_iso()
        report_id = str(uuid4())
        with Session(self.engine) as session:
            if session.get(RunModel, run_id) is None:
                raise KeyError(f"Unknown run_id: {run_id}")
            session.add(ReportModel(
                id=report_id,
                run_id=run_id,
                experiment=experiment,
                verdict=verdict,
                rows_json=json.dumps(rows, default=str),
                created_at=now,
            ))
            session.commit()
        return {
            "id": report_id,
            "run_id": run_id,
            "experiment": experiment,
            "verdict": verdict,
            "rows": rows,
            "created_at": now,
        }

    def reports_for(self, run_id: str) -> list[dict[str, Any]]:
        with Session(self.engine) as session:
            rows = session.exec(select(ReportModel).where(ReportModel.run_id == run_id)).all()
            return [
                {
                    "id": row.id,
                    "run_id": row.run_id,
                    "experiment": row.experiment,
                    "verdict": row.verdict,
                    "rows": json.loads(row.rows_json),
                    "created_at": row.created_at,
                }
                for row in rows
            ]

    def close(self) -> None:
        self.engine.dispose()


# ---------------------------------------------------------------------------
# Factory
# ---------------------------------------------------------------------------


def open_ledger(path: str | Path) -> SqliteRunLedger:
    """Return a SqliteRunLedger connected to the given path.
    Creates the database and tables if they do not exist.
    """
    return SqliteRunLedger(Path(path))

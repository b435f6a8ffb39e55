"""SQLite-backed episodic store.

Two tables: ``facts`` keeps each episode's full JSON plus indexed scalar
columns, ``features`` explodes the feature vector into one row per
``(fact_id, feature_name)`` for numeric threshold search and ML export.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import sqlite3
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

from .facts import TS_FORMAT, EpisodeFact, format_ts

logger = logging.getLogger(__name__)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS facts (
    fact_id     TEXT PRIMARY KEY,
    dataset     TEXT NOT NULL,
    source_file TEXT NOT NULL,
    asset_id    TEXT NOT NULL,
    row_index   INTEGER NOT NULL,
    label       TEXT NOT NULL,
    start_time  TEXT NOT NULL,
    end_time    TEXT NOT NULL,
    fact_json   TEXT NOT NULL,
    ingest_time TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS features (
    fact_id       TEXT NOT NULL REFERENCES facts(fact_id) ON DELETE CASCADE,
    feature_name  TEXT NOT NULL,
    feature_value REAL,
    feature_text  TEXT,
    PRIMARY KEY (fact_id, feature_name)
);
CREATE INDEX IF NOT EXISTS idx_facts_asset ON facts(asset_id, start_time, end_time);
CREATE INDEX IF NOT EXISTS idx_facts_label ON facts(label);
CREATE INDEX IF NOT EXISTS idx_features_name_value ON features(feature_name, feature_value);
"""

OPERATORS = {
    "<": "<",
    "<=": "<=",
    "≤": "<=",
    "=": "=",
    "==": "=",
    ">=": ">=",
    "≥": ">=",
    ">": ">",
}

_NUMERIC_LITERAL = re.compile(r"^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?\s*$")


class StoreError(RuntimeError):
    pass


def now_utc() -> datetime:
    """Current time, pinned by ``SOURCE_DATE_EPOCH`` when set (reproducible runs)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    return datetime.now(timezone.utc)


def to_numeric(value: Any) -> float | None:
    """Parse a feature value as a finite number, else None."""
    if isinstance(value, bool) or value is None:
        return None
    if isinstance(value, (int, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, str) and _NUMERIC_LITERAL.match(value):
        v = float(value)
        return v if math.isfinite(v) else None
    return None


def _as_ts(value: str | datetime) -> str:
    return format_ts(value) if isinstance(value, datetime) else datetime.strptime(value, TS_FORMAT).strftime(TS_FORMAT)


class EpisodicStore:
    """Single-file fact store. One writer at a time; readers may share the handle."""

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys=ON")
        self._conn.executescript(_SCHEMA)
        self._conn.commit()
        self.last_skipped: list[tuple[int, str]] = []

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> EpisodicStore:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- ingest --------------------------------------------------------------

    def _upsert(self, fact: EpisodeFact, raw: str, ingest_time: str, overwrite: bool) -> bool:
        cur = self._conn.cursor()
        if not overwrite:
            hit = cur.execute("SELECT 1 FROM facts WHERE fact_id = ?", (fact.fact_id,)).fetchone()
            if hit:
                return False
        cur.execute("DELETE FROM features WHERE fact_id = ?", (fact.fact_id,))
        cur.execute(
            "INSERT OR REPLACE INTO facts VALUES (?,?,?,?,?,?,?,?,?,?)",
            (
                fact.fact_id,
                fact.dataset,
                fact.source_file,
                fact.asset_id,
                fact.row_index,
                fact.label,
                fact.start_time,
                fact.end_time,
                raw,
                ingest_time,
            ),
        )
        rows = []
        for feat in fact.features:
            num = to_numeric(feat.value)
            text = None if num is not None or feat.value is None else str(feat.value)
            rows.append((fact.fact_id, feat.name, num, text))
        cur.executemany("INSERT OR REPLACE INTO features VALUES (?,?,?,?)", rows)
        return True

    def ingest_facts(self, facts: list[EpisodeFact], overwrite: bool = True) -> int:
        stamp = format_ts(now_utc().replace(tzinfo=None))
        n = 0
        with self._lock:
            try:
                with self._conn:
                    for fact in facts:
                        n += self._upsert(fact, fact.to_json(), stamp, overwrite)
            except sqlite3.Error as exc:
                raise StoreError(f"ingest failed: {exc}") from exc
        return n

    def ingest_jsonl(self, path: str | Path, overwrite: bool = True) -> int:
        """Upsert every fact in a JSONL file; returns the number ingested.

        Malformed lines are skipped and recorded in ``last_skipped`` as
        ``(line_number, reason)``. The file is applied in one transaction.
        """
        stamp = format_ts(now_utc().replace(tzinfo=None))
        self.last_skipped = []
        n = 0
        with self._lock:
            try:
                with self._conn, open(path, encoding="utf-8") as fh:
                    for lineno, line in enumerate(fh, start=1):
                        if not line.strip():
                            continue
                        try:
                            fact = EpisodeFact.from_dict(json.loads(line))
                        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                            reason = f"{type(exc).__name__}: {exc}"
                            logger.warning("%s:%d: skipped malformed fact (%s)", path, lineno, reason)
                            self.last_skipped.append((lineno, reason))
                            continue
                        n += self._upsert(fact, fact.to_json(), stamp, overwrite)
            except sqlite3.Error as exc:
                raise StoreError(f"{path}: ingest aborted: {exc}") from exc
        return n

    # -- reads ---------------------------------------------------------------

    def count(self, table: str = "facts") -> int:
        if table not in ("facts", "features"):
            raise ValueError(table)
        return int(self._conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()[0])

    def get_fact(self, fact_id: str) -> EpisodeFact | None:
        row = self._conn.execute("SELECT fact_json FROM facts WHERE fact_id = ?", (fact_id,)).fetchone()
        return EpisodeFact.from_dict(json.loads(row[0])) if row else None

    def has_fact(self, fact_id: str) -> bool:
        return self._conn.execute("SELECT 1 FROM facts WHERE fact_id = ?", (fact_id,)).fetchone() is not None

    def get_features(self, fact_id: str) -> dict[str, float | str | None]:
        rows = self._conn.execute(
            "SELECT feature_name, feature_value, feature_text FROM features WHERE fact_id = ? ORDER BY rowid",
            (fact_id,),
        )
        return {name: (value if value is not None else text) for name, value, text in rows}

    def facts_row(self, fact_id: str) -> dict[str, Any] | None:
        cur = self._conn.execute("SELECT * FROM facts WHERE fact_id = ?", (fact_id,))
        row = cur.fetchone()
        if row is None:
            return None
        return dict(zip([c[0] for c in cur.description], row))

    def iter_facts(self) -> Iterator[EpisodeFact]:
        for (raw,) in self._conn.execute("SELECT fact_json FROM facts ORDER BY fact_id"):
            yield EpisodeFact.from_dict(json.loads(raw))

    def fact_ids(self) -> list[str]:
        return [r[0] for r in self._conn.execute("SELECT fact_id FROM facts ORDER BY fact_id")]

    def list_assets(self) -> list[str]:
        return [r[0] for r in self._conn.execute("SELECT DISTINCT asset_id FROM facts ORDER BY asset_id")]

    def query_by_asset(self, asset_id: str, limit: int | None = None) -> list[str]:
        return self._limited("SELECT fact_id FROM facts WHERE asset_id = ? ORDER BY fact_id", (asset_id,), limit)

    def query_by_label(self, label: str, limit: int | None = None) -> list[str]:
        return self._limited("SELECT fact_id FROM facts WHERE label = ? ORDER BY fact_id", (label,), limit)

    def _limited(self, sql: str, params: tuple, limit: int | None) -> list[str]:
        if limit is not None:
            if limit <= 0:
                raise ValueError("limit must be positive")
            sql += " LIMIT ?"
            params = params + (limit,)
        return [r[0] for r in self._conn.execute(sql, params)]

    def search_by_feature_threshold(self, feature_name: str, op: str, value: float) -> list[str]:
        """Facts whose numeric ``feature_name`` satisfies ``feature_value <op> value``.

        ``=`` compares the stored double exactly. Text and null values never match.
        """
        if op not in OPERATORS:
            raise ValueError(f"unknown operator {op!r}; expected one of {sorted(set(OPERATORS))}")
        sql = (
            "SELECT fact_id FROM features WHERE feature_name = ? AND feature_value IS NOT NULL "
            f"AND feature_value {OPERATORS[op]} ? ORDER BY fact_id"
        )
        return [r[0] for r in self._conn.execute(sql, (feature_name, float(value)))]

    def query_by_time_range(self, asset_id: str, start: str | datetime, end: str | datetime) -> list[str]:
        """Facts of ``asset_id`` whose ``[start_time, end_time]`` intersects ``[start, end]``."""
        lo, hi = _as_ts(start), _as_ts(end)
        if lo > hi:
            raise ValueError(f"inverted time range: {lo} > {hi}")
        sql = (
            "SELECT fact_id FROM facts WHERE asset_id = ? AND start_time <= ? AND end_time >= ? "
            "ORDER BY fact_id"
        )
        return [r[0] for r in self._conn.execute(sql, (asset_id, hi, lo))]

    def balanced_sample(self, per_label: int) -> list[str]:
        """Up to ``per_label`` fact ids per label, lowest ids first."""
        out: list[str] = []
        labels = [r[0] for r in self._conn.execute("SELECT DISTINCT label FROM facts ORDER BY label")]
        for label in labels:
            out.extend(self.query_by_label(label, per_label))
        return out

    def export_features_csv(self, out_csv: str | Path) -> int:
        names = [r[0] for r in self._conn.execute("SELECT DISTINCT feature_name FROM features ORDER BY feature_name")]
        facts = self._conn.execute("SELECT fact_id, label, asset_id FROM facts ORDER BY fact_id").fetchall()
        n = 0
        try:
            with open(out_csv, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["fact_id", "label", "asset_id", *names])
                for fact_id, label, asset_id in facts:
                    feats = self.get_features(fact_id)
                    cells = []
                    for name in names:
                        v = feats.get(name)
                        cells.append("" if v is None else (repr(v) if isinstance(v, float) else v))
                    writer.writerow([fact_id, label, asset_id, *cells])
                    n += 1
        except OSError as exc:
            raise StoreError(f"{out_csv}: export failed: {exc}") from exc
        return n

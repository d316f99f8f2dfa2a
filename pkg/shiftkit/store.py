"""SQLite store of benchmark cell records, for resumable runs."""
import hashlib
import sqlite3
from datetime import datetime
from os import PathLike
from typing import Optional, Union

import orjson

from shiftkit.exceptions import StoreError, StoreInitError
from shiftkit.schemas import ExperimentConfig, ExperimentRecord

_REQUIRED_TABLES = {"store_meta", "experiment", "record"}
_STORE_SCHEMA_VERSION = "0"
STORE_FILENAME = "runs.db"

# Fields that choose or schedule cells without changing any cell's result.
_DIGEST_EXCLUDE = {"seeds", "jobs", "output_dir", "protocol", "methods"}


def config_digest(config: ExperimentConfig) -> str:
    """Hex digest identifying the cell-level settings of an experiment."""
    payload = orjson.dumps(
        config.dict(exclude=_DIGEST_EXCLUDE),
        default=str,
        option=orjson.OPT_SORT_KEYS,
    )
    return hashlib.sha256(payload).hexdigest()


class RunStore:
    """Record store keyed by (config digest, cell)."""

    _conn: sqlite3.Connection

    def __init__(self, database: Union[str, PathLike, sqlite3.Connection]):
        """Loads or initializes a store."""
        if isinstance(database, sqlite3.Connection):
            self._conn = database
        else:
            try:
                self._conn = sqlite3.connect(database)
            except sqlite3.OperationalError as ex:
                raise StoreInitError(
                    f"Failed to load or initialize result store ({database})."
                ) from ex

        if not self._tables():
            self._init_db()
        else:
            self._assert_clean()

    def register(self, config: ExperimentConfig) -> str:
        """Registers an experiment configuration; returns its digest."""
        digest = config_digest(config)
        with self._conn:
            self._conn.execute(
                (
                    "INSERT OR IGNORE INTO experiment (digest, config, created_at) "
                    "VALUES (?, ?, ?)"
                ),
                (digest, config.json(), datetime.now().isoformat()),
            )
        return digest

    def get(self, digest: str, cell: str) -> Optional[ExperimentRecord]:
        """Returns a stored record, if any."""
        row = self._conn.execute(
            "SELECT payload FROM record WHERE digest = ? AND cell = ?",
            (digest, cell),
        ).fetchone()
        if row is None:
            return None
        return self._parse(row[0])

    def put(self, digest: str, record: ExperimentRecord) -> None:
        """Upserts a record."""
        with self._conn:
            self._conn.execute(
                "DELETE FROM record WHERE digest = ? AND cell = ?",
                (digest, record.cell),
            )
            self._conn.execute(
                (
                    "INSERT INTO record (digest, cell, payload, stored_at) "
                    "VALUES (?, ?, ?, ?)"
                ),
                (
                    digest,
                    record.cell,
                    orjson.dumps(record.dict()),
                    datetime.now().isoformat(),
                ),
            )

    def records(self, digest: str) -> dict[str, ExperimentRecord]:
        """All records stored for a digest, by cell."""
        rows = self._conn.execute(
            "SELECT cell, payload FROM record WHERE digest = ? ORDER BY cell",
            (digest,),
        ).fetchall()
        return {cell: self._parse(payload) for cell, payload in rows}

    def close(self) -> None:
        self._conn.close()

    @staticmethod
    def _parse(payload: bytes) -> ExperimentRecord:
        try:
            return ExperimentRecord.parse_obj(orjson.loads(payload))
        except (orjson.JSONDecodeError, ValueError) as ex:
            raise StoreError("Invalid store: unreadable record payload.") from ex

    def _tables(self) -> set[str]:
        """Fetches a list of user-defined tables in the store database."""
        tables = self._conn.execute(
            """SELECT name FROM sqlite_master
            WHERE type ='table' AND name NOT LIKE 'sqlite_%';"""
        ).fetchall()
        return {table[0] for table in tables}

    def _assert_clean(self) -> None:
        """Asserts that the store's schema matches the current schema version.

        Raises:
            StoreInitError: If the store is invalid.
        """
        table_diff = _REQUIRED_TABLES - self._tables()
        if table_diff:
            missing_tables = ", ".join(sorted(table_diff))
            raise StoreInitError(f"Invalid store: missing table(s) {missing_tables}.")

        schema_version = self._conn.execute(
            "SELECT value FROM store_meta WHERE key='schema_version'"
        ).fetchone()
        if schema_version is None:
            raise StoreInitError("Invalid store: no schema version in store metadata.")
        if schema_version[0] != _STORE_SCHEMA_VERSION:
            raise StoreInitError(
                f"Invalid store: expected schema version {_STORE_SCHEMA_VERSION}, "
                f"but got schema version {schema_version[0]}."
            )

    def _init_db(self) -> None:
        """Initializes result store tables."""
        self._conn.execute(
            """CREATE TABLE store_meta(
                key   TEXT PRIMARY KEY NOT NULL,
                value TEXT NOT NULL
            )"""
        )
        self._conn.execute(
            """CREATE TABLE experiment(
                digest      TEXT PRIMARY KEY NOT NULL,
                config      TEXT NOT NULL,
                created_at  TEXT NOT NULL
            )"""
        )
        self._conn.execute(
            """CREATE TABLE record(
                digest      TEXT NOT NULL REFERENCES experiment(digest),
                cell        TEXT NOT NULL,
                payload     BLOB NOT NULL,
                stored_at   TEXT NOT NULL,
                UNIQUE(digest, cell)
            )"""
        )
        self._conn.execute(
            "INSERT INTO store_meta (key, value) VALUES ('schema_version', ?)",
            (_STORE_SCHEMA_VERSION,),
        )
        self._conn.commit()

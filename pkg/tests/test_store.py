"""Tests for the result store."""
import pytest

from shiftkit.exceptions import StoreError, StoreInitError
from shiftkit.schemas import (
    CellStatus,
    DatasetSpec,
    ExperimentConfig,
    ExperimentRecord,
    ModeSpec,
)
from shiftkit.store import RunStore, config_digest


@pytest.fixture
def store():
    """An in-memory instance of `RunStore`."""
    return RunStore(":memory:")


@pytest.fixture
def config():
    mode = ModeSpec(class_means=[[0.0], [1.0]])
    return ExperimentConfig(dataset=DatasetSpec(modes=[mode, mode]))


def _record(seed=1, accuracy=0.5, status=CellStatus.OK):
    return ExperimentRecord(
        method="otda",
        sources=["mode0"],
        target="mode1",
        seed=seed,
        status=status,
        accuracy=accuracy if status == CellStatus.OK else None,
        wall_time=0.25,
        diagnostics={"mmd_before": 1.0},
    )


def test_run_store_init__no_schema_version(store):
    store._conn.execute("DELETE FROM store_meta")
    store._conn.commit()
    with pytest.raises(StoreInitError, match="no schema version"):
        RunStore(store._conn)


def test_run_store_init__bad_schema_version(store):
    store._conn.execute("UPDATE store_meta SET value='bad' WHERE key='schema_version'")
    store._conn.commit()
    with pytest.raises(StoreInitError, match="expected schema version"):
        RunStore(store._conn)


def test_run_store_init__missing_table(store):
    store._conn.execute("DROP TABLE record")
    store._conn.commit()
    with pytest.raises(StoreInitError, match="missing table"):
        RunStore(store._conn)


def test_run_store_init__reopen_file(tmp_path, config):
    path = tmp_path / "runs.db"
    store = RunStore(path)
    digest = store.register(config)
    store.put(digest, _record())
    store.close()

    reopened = RunStore(path)
    assert reopened.get(digest, _record().cell) == _record()
    reopened.close()


def test_run_store_get__missing(store, config):
    digest = store.register(config)
    assert store.get(digest, "otda|mode0|mode1|1") is None


def test_run_store_put__upserts(store, config):
    digest = store.register(config)
    store.put(digest, _record(accuracy=0.5))
    store.put(digest, _record(accuracy=0.75))
    assert store.get(digest, _record().cell).accuracy == 0.75
    assert len(store.records(digest)) == 1


def test_run_store_records__keyed_by_cell(store, config):
    digest = store.register(config)
    store.put(digest, _record(seed=1))
    store.put(digest, _record(seed=2, status=CellStatus.FAILED))
    records = store.records(digest)
    assert list(records) == ["otda|mode0|mode1|1", "otda|mode0|mode1|2"]
    assert records["otda|mode0|mode1|2"].status == CellStatus.FAILED


def test_run_store_records__isolated_by_digest(store, config):
    digest = store.register(config)
    other = store.register(config.copy(update={"split": 0.5}))
    store.put(digest, _record())
    assert digest != other
    assert store.records(other) == {}


def test_run_store_get__unreadable_payload(store, config):
    digest = store.register(config)
    store._conn.execute(
        "INSERT INTO record (digest, cell, payload, stored_at) VALUES (?, ?, ?, ?)",
        (digest, "bad", b"{not json", "now"),
    )
    store._conn.commit()
    with pytest.raises(StoreError, match="unreadable record payload"):
        store.get(digest, "bad")


def test_config_digest__ignores_scheduling_fields(config):
    rescheduled = config.copy(update={"seeds": [7], "jobs": 4, "methods": ["otda"]})
    assert config_digest(rescheduled) == config_digest(config)


def test_config_digest__tracks_cell_settings(config):
    changed = config.copy(update={"split": 0.5})
    assert config_digest(changed) != config_digest(config)

"""Tests for benchmark protocols and report emission."""
import asyncio

import numpy as np
import orjson
import pytest

from shiftkit import bench
from shiftkit.bench import (
    SPLIT_STREAM,
    Cell,
    accuracy_grid,
    aggregate,
    averages,
    cell_data,
    delta_grid,
    emit_report,
    load_report,
    multi_source_cells,
    pairwise_cells,
    run_baselines,
    run_bounded,
    run_cell,
    run_experiment,
    run_multi_source,
    run_pairwise,
    split_domain,
)
from shiftkit.core import LabeledDataset, Rng
from shiftkit.datasets import gen_synthetic_modes, translation_family
from shiftkit.exceptions import (
    AdaptationError,
    ConfigError,
    InputDomainError,
    ReportError,
)
from shiftkit.schemas import (
    CellStatus,
    DadilConfig,
    DatasetSpec,
    ExperimentConfig,
    ExperimentRecord,
    ExperimentReport,
    JdotConfig,
    Protocol,
    TrainConfig,
)
from shiftkit.store import RunStore

DOMAINS = ["mode0", "mode1"]


@pytest.fixture
def specs():
    return translation_family(n_modes=3, n_classes=2, shift=1.0)


@pytest.fixture
def domains(specs):
    return gen_synthetic_modes(specs, 40, Rng(0))


@pytest.fixture
def config(specs):
    return ExperimentConfig(
        dataset=DatasetSpec(modes=specs, n_per_mode=40),
        methods=["otda"],
        seeds=[1, 2],
        train=TrainConfig(lr=0.1, batch_size=16, epochs=3),
        hidden_dims=(8,),
        latent_dim=4,
    )


def _record(method, target, accuracy, seed=1, sources=("mode0",), **fields):
    return ExperimentRecord(
        method=method,
        sources=list(sources),
        target=target,
        seed=seed,
        accuracy=accuracy,
        wall_time=0.5,
        **fields,
    )


@pytest.fixture
def report():
    records = [
        _record("target_only", "mode0", 1.0),
        _record("source_only", "mode1", 0.6),
        _record("otda", "mode1", 0.8, seed=1),
        _record("otda", "mode1", 0.6, seed=2),
    ]
    return ExperimentReport(
        protocol=Protocol.PAIRWISE,
        domains=DOMAINS,
        config_digest="abc",
        records=records,
        aggregates=aggregate(records),
        notes=["seeds: 1, 2"],
    )


def test_pairwise_cells__order():
    cells = pairwise_cells(["a", "b"], ["otda"], [1, 2])
    assert [(c.method, c.sources, c.target, c.seed) for c in cells] == [
        ("target_only", ("a",), "a", 1),
        ("target_only", ("a",), "a", 2),
        ("source_only", ("a",), "b", 1),
        ("source_only", ("a",), "b", 2),
        ("otda", ("a",), "b", 1),
        ("otda", ("a",), "b", 2),
        ("source_only", ("b",), "a", 1),
        ("source_only", ("b",), "a", 2),
        ("otda", ("b",), "a", 1),
        ("otda", ("b",), "a", 2),
        ("target_only", ("b",), "b", 1),
        ("target_only", ("b",), "b", 2),
    ]


def test_multi_source_cells__leave_one_out():
    cells = multi_source_cells(["a", "b", "c"], ["wbt"], [1])
    assert len(cells) == 9
    assert cells[0] == Cell("target_only", ("a",), "a", 1)
    assert cells[1] == Cell("source_only", ("b", "c"), "a", 1)
    assert cells[2] == Cell("wbt", ("b", "c"), "a", 1)
    assert cells[-1].sources == ("a", "b")


def test_cell__key():
    assert Cell("wbt", ("b", "c"), "a", 3).key == "wbt|b+c|a|3"


def test_split_domain__stratified(domains):
    train, test = split_domain(domains[0], 0.7, Rng(1))
    assert train.n + test.n == domains[0].n
    assert train.n == 28
    assert set(train.labels) == set(test.labels) == {0, 1}


def test_split_domain__reproducible(domains):
    a, _ = split_domain(domains[0], 0.7, Rng(1))
    b, _ = split_domain(domains[0], 0.7, Rng(1))
    np.testing.assert_array_equal(a.features, b.features)


def test_split_domain__tiny_class_falls_back():
    ds = LabeledDataset(np.arange(10.0), [0] * 9 + [1], class_count=2)
    train, test = split_domain(ds, 0.5, Rng(0))
    assert (train.n, test.n) == (5, 5)


def test_cell_data__scaler_fit_on_sources(domains, config):
    named = {ds.domain_id: ds for ds in domains}
    data = cell_data(Cell("otda", ("mode0",), "mode2", 1), named, config)
    np.testing.assert_allclose(data.pooled.features.mean(axis=0), 0.0, atol=1e-12)
    assert data.target_train.n + data.target_test.n == 40

    streams = Rng(1).child(SPLIT_STREAM, 0), Rng(1).child(SPLIT_STREAM, 2)
    source, _ = split_domain(named["mode0"], config.split, streams[0])
    target, _ = split_domain(named["mode2"], config.split, streams[1])
    mean = source.features.mean(axis=0)
    std = source.features.std(axis=0)
    np.testing.assert_allclose(data.X_t, (target.features - mean) / std)


def test_cell_data__target_only_scaler(domains, config):
    named = {ds.domain_id: ds for ds in domains}
    data = cell_data(Cell("target_only", ("mode2",), "mode2", 1), named, config)
    np.testing.assert_allclose(data.X_t.mean(axis=0), 0.0, atol=1e-12)


def test_run_cell__ok(domains, config):
    named = {ds.domain_id: ds for ds in domains}
    record = run_cell(Cell("otda", ("mode0",), "mode1", 1), named, config)
    assert record.status == CellStatus.OK
    assert 0 <= record.accuracy <= 1
    assert record.wall_time > 0
    assert set(record.diagnostics) == {"mmd_before", "mmd_after"}


def test_run_cell__failure_becomes_record(domains, config, monkeypatch):
    def failing(data, cfg, seed):
        raise AdaptationError("OTDA: floating-point failure (overflow).")

    monkeypatch.setitem(bench.RUNNERS, "otda", failing)
    named = {ds.domain_id: ds for ds in domains}
    record = run_cell(Cell("otda", ("mode0",), "mode1", 1), named, config)
    assert record.status == CellStatus.FAILED
    assert record.accuracy is None
    assert record.error == "AdaptationError: OTDA: floating-point failure (overflow)."


def test_run_bounded__limits_jobs_and_keeps_order():
    running = 0
    peak = 0

    async def job(value):
        nonlocal running, peak
        running += 1
        peak = max(peak, running)
        await asyncio.sleep(0)
        running -= 1
        return value

    results = asyncio.run(run_bounded([job(value) for value in range(6)], 2))
    assert results == list(range(6))
    assert peak == 2


def test_aggregate__population_std_and_failures():
    records = [
        _record("otda", "mode1", 0.5, seed=1),
        _record("otda", "mode1", 0.7, seed=2),
        _record("otda", "mode1", None, seed=3, status=CellStatus.FAILED),
    ]
    (agg,) = aggregate(records)
    assert agg.mean == pytest.approx(0.6)
    assert agg.std == pytest.approx(0.1)
    assert (agg.n_ok, agg.n_failed) == (2, 1)


def test_aggregate__all_failed():
    records = [_record("otda", "mode1", None, status=CellStatus.FAILED)]
    (agg,) = aggregate(records)
    assert agg.mean is None
    assert agg.n_failed == 1


def test_accuracy_grid__layout(report):
    grid = accuracy_grid(report)
    assert list(grid.columns) == DOMAINS
    assert list(grid.index) == [
        ("target_only", "mode0"),
        ("source_only", "mode0"),
        ("otda", "mode0"),
    ]
    assert grid.loc[("otda", "mode0"), "mode1"] == pytest.approx(0.7)
    assert np.isnan(grid.loc[("otda", "mode0"), "mode0"])


def test_delta_grid__relative_to_source_only(report):
    grid = delta_grid(report)
    assert list(grid.index) == [("otda", "mode0")]
    assert grid.loc[("otda", "mode0"), "mode1"] == pytest.approx(0.1)


def test_averages__per_method(report):
    frame = averages(report)
    assert frame.loc["otda", "mean_accuracy"] == pytest.approx(0.7)
    assert frame.loc["otda", "mean_delta"] == pytest.approx(0.1)
    assert np.isnan(frame.loc["source_only", "mean_delta"])


def test_emit_report__csv(report, tmp_path):
    paths = emit_report(report, tmp_path)
    names = [path.name for path in paths]
    assert names == ["accuracy.csv", "delta.csv", "averages.csv"]
    assert (tmp_path / "accuracy.csv").read_text().splitlines() == [
        "# protocol: pairwise",
        "# seeds: 1, 2",
        "method,sources,mode0,mode1",
        "target_only,mode0,1.000000,",
        "source_only,mode0,,0.600000",
        "otda,mode0,,0.700000",
    ]
    assert (tmp_path / "delta.csv").read_text().splitlines()[-1] == (
        "otda,mode0,,0.100000"
    )


def test_emit_report__byte_identical(report, tmp_path):
    emit_report(report, tmp_path / "a", "json")
    emit_report(report, tmp_path / "a", "csv")
    emit_report(load_report(tmp_path / "a"), tmp_path / "b", "json")
    emit_report(load_report(tmp_path / "a"), tmp_path / "b", "csv")
    for name in ("report.json", "accuracy.csv", "delta.csv", "averages.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes()


def test_emit_report__json_omits_wall_time(report, tmp_path):
    (path,) = emit_report(report, tmp_path, "json")
    payload = orjson.loads(path.read_bytes())
    assert "wall_time" not in payload["records"][0]
    assert payload["config_digest"] == "abc"


def test_emit_report__timing(report, tmp_path):
    paths = emit_report(report, tmp_path, "csv", include_timing=True)
    assert paths[-1].name == "timing.csv"
    lines = paths[-1].read_text().splitlines()
    assert "target_only|mode0|mode0|1,0.500000" in lines


def test_emit_report__empty_report_is_header_only(tmp_path):
    empty = ExperimentReport(protocol=Protocol.MULTI_SOURCE, domains=DOMAINS)
    emit_report(empty, tmp_path)
    lines = (tmp_path / "accuracy.csv").read_text().splitlines()
    assert lines[0] == "# protocol: multi_source"
    assert [line for line in lines if not line.startswith("#")] == [
        "method,sources,mode0,mode1"
    ]


def test_emit_report__unknown_format(report, tmp_path):
    with pytest.raises(ReportError, match="Unknown report format"):
        emit_report(report, tmp_path, "xlsx")


def test_emit_report__unwritable(report, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ReportError, match="Failed to write"):
        emit_report(report, blocker / "out")


def test_load_report__missing(tmp_path):
    with pytest.raises(ReportError, match="Failed to read"):
        load_report(tmp_path)


def test_run_pairwise__records(domains, config):
    report = run_pairwise(config, domains[:2])
    assert report.protocol == Protocol.PAIRWISE
    assert report.domains == DOMAINS
    # 2 diagonal target-only cells plus 2 ordered pairs × (source-only, otda).
    assert len(report.records) == (2 + 2 * 2) * len(config.seeds)
    assert all(record.status == CellStatus.OK for record in report.records)
    assert len(report.aggregates) == 6
    assert "seeds: 1, 2" in report.notes


def test_run_pairwise__reproducible(domains, config):
    a = run_pairwise(config, domains[:2])
    b = run_pairwise(config, domains[:2])
    assert [r.accuracy for r in a.records] == [r.accuracy for r in b.records]


def test_run_pairwise__parallel_matches_serial(domains, config):
    serial = run_pairwise(config, domains[:2])
    parallel = run_pairwise(config.copy(update={"jobs": 3}), domains[:2])
    assert [r.cell for r in parallel.records] == [r.cell for r in serial.records]
    assert [r.accuracy for r in parallel.records] == [
        r.accuracy for r in serial.records
    ]


def test_run_pairwise__skips_multi_source_methods(domains, config):
    cfg = config.copy(update={"methods": ["otda", "wbt"], "seeds": [1]})
    report = run_pairwise(cfg, domains[:2])
    assert {r.method for r in report.records} == {
        "target_only",
        "source_only",
        "otda",
    }


def test_run_pairwise__single_domain(domains, config):
    with pytest.raises(InputDomainError, match="at least 2 domains"):
        run_pairwise(config, domains[:1])


def test_run_pairwise__unknown_method(domains, config):
    cfg = config.copy(update={"methods": ["magic"]})
    with pytest.raises(ConfigError, match="magic"):
        run_pairwise(cfg, domains[:2])


def test_run_pairwise__duplicate_domain_ids(domains, config):
    with pytest.raises(ConfigError, match="unique"):
        run_pairwise(config, [domains[0], domains[0]])


def test_run_multi_source__too_few_domains(domains, config):
    with pytest.raises(InputDomainError, match="at least 3 domains"):
        run_multi_source(config, domains[:2])


def test_run_baselines__pairwise(domains, config):
    report = run_baselines(config.copy(update={"seeds": [1]}), domains[:2])
    assert {r.method for r in report.records} == {"target_only", "source_only"}
    assert len(report.records) == 4


def test_run_experiment__multi_source(domains, config):
    cfg = config.copy(
        update={"protocol": Protocol.MULTI_SOURCE, "methods": ["wbt"], "seeds": [1]}
    )
    report = run_experiment(cfg, domains)
    assert report.protocol == Protocol.MULTI_SOURCE
    # Per target: target-only, pooled source-only, and wbt.
    assert len(report.records) == 3 * 3
    wbt = [r for r in report.records if r.method == "wbt"]
    assert all(len(r.sources) == 2 for r in wbt)


def test_run_experiment__store_reuses_records(domains, config, monkeypatch):
    store = RunStore(":memory:")
    first = run_experiment(config, domains[:2], store=store)

    def failing(data, cfg, seed):
        raise AdaptationError("should not run")

    monkeypatch.setitem(bench.RUNNERS, "otda", failing)
    second = run_experiment(config, domains[:2], store=store)
    assert second.config_digest == first.config_digest
    assert [r.accuracy for r in second.records] == [r.accuracy for r in first.records]


def test_run_experiment__store_retries_failed_cells(domains, config, monkeypatch):
    store = RunStore(":memory:")
    original = bench.RUNNERS["otda"]

    def failing(data, cfg, seed):
        raise AdaptationError("transient")

    monkeypatch.setitem(bench.RUNNERS, "otda", failing)
    first = run_experiment(config, domains[:2], store=store)
    assert any(r.status == CellStatus.FAILED for r in first.records)

    monkeypatch.setitem(bench.RUNNERS, "otda", original)
    second = run_experiment(config, domains[:2], store=store)
    assert all(r.status == CellStatus.OK for r in second.records)


@pytest.mark.slow
@pytest.mark.parametrize(
    "protocol,methods",
    [
        (Protocol.PAIRWISE, ["tca", "otda", "jdot", "mmd", "dann", "deepjdot"]),
        (
            Protocol.MULTI_SOURCE,
            ["m3sda", "m3sda_beta", "wjdot", "wbt", "dadil_r", "dadil_e"],
        ),
    ],
)
def test_run_experiment__every_method(domains, config, protocol, methods):
    cfg = config.copy(
        update={
            "protocol": protocol,
            "methods": methods,
            "seeds": [1],
            "jdot": config.jdot.copy(update={"outer_iters": 2, "warm_start_epochs": 2}),
            "wjdot": config.wjdot.copy(
                update={"outer_iters": 2, "warm_start_epochs": 2}
            ),
            "dadil": config.dadil.copy(update={"iters": 2}),
            "tca": config.tca.copy(update={"n_components": 2}),
        }
    )
    report = run_experiment(cfg, domains)
    failures = [r.error for r in report.records if r.status == CellStatus.FAILED]
    assert failures == []
    assert {r.method for r in report.records} >= set(methods)
    assert all(0 <= r.accuracy <= 1 for r in report.records)


@pytest.mark.slow
def test_run_experiment__adapters_close_translation_gap():
    specs = translation_family(n_modes=5, n_classes=3)
    domains = gen_synthetic_modes(specs, 150, Rng(0))
    cfg = ExperimentConfig(
        dataset=DatasetSpec(modes=specs, n_per_mode=150),
        methods=["otda", "jdot"],
        seeds=[1, 2, 3],
        jobs=4,
        train=TrainConfig(lr=0.1, batch_size=32, epochs=100),
        hidden_dims=(32,),
        latent_dim=16,
        # A small label weight keeps the coupling driven by the features.
        jdot=JdotConfig(beta=0.1, outer_iters=5, warm_start_epochs=50, inner_epochs=10),
        dadil=DadilConfig(iters=20),
    )
    single = averages(run_experiment(cfg, domains))
    multi = averages(
        run_experiment(
            cfg.copy(
                update={
                    "protocol": Protocol.MULTI_SOURCE,
                    "methods": ["wbt", "dadil_r"],
                }
            ),
            domains,
        )
    )

    assert (
        multi.loc["source_only", "mean_accuracy"]
        > single.loc["source_only", "mean_accuracy"]
    )
    for method in ("otda", "jdot"):
        assert single.loc[method, "mean_delta"] >= 0.05, method
    for method in ("wbt", "dadil_r"):
        assert multi.loc[method, "mean_delta"] >= 0.05, method

    best = max(
        single.loc[["otda", "jdot"], "mean_accuracy"].max(),
        multi.loc[["wbt", "dadil_r"], "mean_accuracy"].max(),
    )
    assert multi.loc["target_only", "mean_accuracy"] <= best + 0.05

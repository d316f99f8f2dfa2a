"""Benchmark protocols: baselines, the pairwise grid, and leave-one-out runs.

Every cell (method, sources, target, seed) splits each domain it touches
into train and test parts with its own seeded stream. Adapters see labeled
source train splits and the unlabeled target train split; accuracy is
measured on the held-out target test split.
"""
import asyncio
import logging
import time
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Awaitable, Callable, Optional, Sequence, Union

import numpy as np
import orjson
import pandas as pd
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from shiftkit.adapters import (
    dadil_e_predict,
    dadil_fit,
    dadil_r_transform,
    dann_fit,
    deepjdot_fit,
    jdot_fit,
    m3sda_fit,
    m3sda_predict,
    mmdnet_fit,
    otda_adapt,
    tca_adapt,
    tca_transform,
    train_atomic_classifiers,
    wbt_fit,
    wjdot_fit,
)
from shiftkit.adapters.m3sda import m3sda_architecture
from shiftkit.classifiers import FeedForwardNet, predict, train_erm
from shiftkit.core import LabeledDataset, Rng, concat
from shiftkit.datasets import gen_synthetic_modes
from shiftkit.divergences import mmd
from shiftkit.exceptions import (
    ConfigError,
    InputDomainError,
    ReportError,
    ShiftKitError,
)
from shiftkit.schemas import (
    Aggregate,
    Architecture,
    CellStatus,
    DatasetKind,
    DatasetSpec,
    ExperimentConfig,
    ExperimentRecord,
    ExperimentReport,
    Protocol,
    TrainConfig,
    cell_key,
)
from shiftkit.store import RunStore, config_digest
from shiftkit.te import load_te_domains

log = logging.getLogger(__name__)

SOURCE_ONLY = "source_only"
TARGET_ONLY = "target_only"
BASELINES = (SOURCE_ONLY, TARGET_ONLY)

INIT_STREAM = 1
SPLIT_STREAM = 10
ADAPT_STREAM = 11

HELD_OUT_NOTE = (
    "target accuracy is measured on a held-out test split; adapters see only "
    "the unlabeled target train split"
)
REPORT_JSON = "report.json"
FLOAT_FORMAT = "%.6f"

CELL_ERRORS = (ShiftKitError, ArithmeticError, ValueError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class Cell:
    """One benchmark cell, naming domains by id."""

    method: str
    sources: tuple[str, ...]
    target: str
    seed: int

    @property
    def key(self) -> str:
        return cell_key(self.method, self.sources, self.target, self.seed)


@dataclass(frozen=True, eq=False)
class CellData:
    """Standardized splits for one cell.

    Only `target_only` reads `target_train.labels`.
    """

    sources: list[LabeledDataset]
    target_train: LabeledDataset
    target_test: LabeledDataset

    @property
    def pooled(self) -> LabeledDataset:
        return concat(self.sources)

    @property
    def X_t(self) -> np.ndarray:
        return self.target_train.features

    @property
    def X_test(self) -> np.ndarray:
        return self.target_test.features


Runner = Callable[[CellData, ExperimentConfig, int], tuple[np.ndarray, dict]]


def _train_cfg(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return cfg.train.copy(update={"seed": seed})


def _architecture(
    cfg: ExperimentConfig, n_features: int, n_classes: int
) -> Architecture:
    return Architecture.classifier(
        n_features, n_classes, hidden_dims=cfg.hidden_dims, latent_dim=cfg.latent_dim
    )


def _fit_classifier(
    ds: LabeledDataset, cfg: ExperimentConfig, seed: int
) -> FeedForwardNet:
    net = FeedForwardNet.initialize(
        _architecture(cfg, ds.n_features, ds.class_count),
        Rng(seed).child(INIT_STREAM),
    )
    return train_erm(net, ds, _train_cfg(cfg, seed)).net


def _run_source_only(data: CellData, cfg: ExperimentConfig, seed: int):
    net = _fit_classifier(data.pooled, cfg, seed)
    return predict(net, data.X_test), {}


def _run_target_only(data: CellData, cfg: ExperimentConfig, seed: int):
    net = _fit_classifier(data.target_train, cfg, seed)
    return predict(net, data.X_test), {}


def _run_tca(data: CellData, cfg: ExperimentConfig, seed: int):
    source = data.pooled
    projected, _, model = tca_adapt(
        source, data.X_t, cfg.tca.kernel, cfg.tca.mu, cfg.tca.n_components
    )
    net = _fit_classifier(projected, cfg, seed)
    X_test = tca_transform(model, data.X_test, extend=True)
    return predict(net, X_test), {"n_components": float(model.W.shape[1])}


def _run_otda(data: CellData, cfg: ExperimentConfig, seed: int):
    source = data.pooled
    transported = otda_adapt(source, data.X_t)
    net = _fit_classifier(transported, cfg, seed)
    diagnostics = {
        "mmd_before": mmd(source.features, data.X_t),
        "mmd_after": mmd(transported.features, data.X_t),
    }
    return predict(net, data.X_test), diagnostics


def _run_jdot(data: CellData, cfg: ExperimentConfig, seed: int):
    source = data.pooled
    jdot_cfg = cfg.jdot.copy(update={"train": _train_cfg(cfg, seed)})
    architecture = _architecture(cfg, source.n_features, source.class_count)
    result = jdot_fit(source, data.X_t, jdot_cfg, architecture)
    return predict(result.net, data.X_test), {"objective": result.objective[-1]}


def _deep_cfg(cfg: ExperimentConfig, seed: int):
    return cfg.deep.copy(update={"train": _train_cfg(cfg, seed)})


def _deep_runner(fit: Callable) -> Runner:
    def run(data: CellData, cfg: ExperimentConfig, seed: int):
        source = data.pooled
        architecture = _architecture(cfg, source.n_features, source.class_count)
        result = fit(source, data.X_t, _deep_cfg(cfg, seed), architecture)
        diagnostics = dict(result.diagnostics)
        if result.domain_accuracy:
            diagnostics["domain_accuracy"] = result.domain_accuracy[-1]
        return predict(result.net, data.X_test), diagnostics

    return run


def _m3sda_runner(beta_variant: bool) -> Runner:
    def run(data: CellData, cfg: ExperimentConfig, seed: int):
        first = data.sources[0]
        architecture = m3sda_architecture(
            first.n_features,
            first.class_count,
            len(data.sources),
            beta_variant,
            cfg.hidden_dims,
            cfg.latent_dim,
        )
        result = m3sda_fit(
            data.sources, data.X_t, _deep_cfg(cfg, seed), beta_variant, architecture
        )
        probs = m3sda_predict(result.net, data.X_test, result.weights)
        diagnostics = {
            f"weight_{k}": result.weights[k] for k in range(len(result.weights))
        }
        return np.argmax(probs, axis=1), diagnostics

    return run


def _run_wjdot(data: CellData, cfg: ExperimentConfig, seed: int):
    first = data.sources[0]
    wjdot_cfg = cfg.wjdot.copy(update={"train": _train_cfg(cfg, seed)})
    architecture = _architecture(cfg, first.n_features, first.class_count)
    result = wjdot_fit(data.sources, data.X_t, wjdot_cfg, architecture)
    alpha = result.model.alpha
    diagnostics = {f"alpha_{k}": alpha[k] for k in range(len(alpha))}
    diagnostics["objective"] = result.objective[-1]
    return predict(result.model.net, data.X_test), diagnostics


def _run_wbt(data: CellData, cfg: ExperimentConfig, seed: int):
    first = data.sources[0]
    result = wbt_fit(
        data.sources,
        data.X_t,
        cfg.wbt,
        Rng(seed).child(ADAPT_STREAM),
        _train_cfg(cfg, seed),
        _architecture(cfg, first.n_features, first.class_count),
    )
    return predict(result.net, data.X_test), {}


def _run_dadil_r(data: CellData, cfg: ExperimentConfig, seed: int):
    rng = Rng(seed).child(ADAPT_STREAM)
    fitted = dadil_fit(data.sources, data.X_t, cfg.dadil, rng.child(0))
    reconstruction = dadil_r_transform(fitted.dictionary, rng.child(1))
    net = _fit_classifier(reconstruction, cfg, seed)
    return predict(net, data.X_test), {"loss": fitted.losses[-1]}


def _run_dadil_e(data: CellData, cfg: ExperimentConfig, seed: int):
    rng = Rng(seed).child(ADAPT_STREAM)
    fitted = dadil_fit(data.sources, data.X_t, cfg.dadil, rng.child(0))
    first = data.sources[0]
    nets = train_atomic_classifiers(
        fitted.dictionary,
        _train_cfg(cfg, seed),
        _architecture(cfg, first.n_features, first.class_count),
    )
    probs = dadil_e_predict(fitted.dictionary, nets, data.X_test)
    return np.argmax(probs, axis=1), {"loss": fitted.losses[-1]}


BASELINE_RUNNERS: dict[str, Runner] = {
    SOURCE_ONLY: _run_source_only,
    TARGET_ONLY: _run_target_only,
}

# Single-source methods; in the multi-source protocol they see the pooled sources.
SINGLE_SOURCE_METHODS: dict[str, Runner] = {
    "tca": _run_tca,
    "otda": _run_otda,
    "jdot": _run_jdot,
    "mmd": _deep_runner(mmdnet_fit),
    "dann": _deep_runner(dann_fit),
    "deepjdot": _deep_runner(deepjdot_fit),
}

MULTI_SOURCE_METHODS: dict[str, Runner] = {
    "m3sda": _m3sda_runner(False),
    "m3sda_beta": _m3sda_runner(True),
    "wjdot": _run_wjdot,
    "wbt": _run_wbt,
    "dadil_r": _run_dadil_r,
    "dadil_e": _run_dadil_e,
}

RUNNERS: dict[str, Runner] = {
    **BASELINE_RUNNERS,
    **SINGLE_SOURCE_METHODS,
    **MULTI_SOURCE_METHODS,
}


def load_domains(spec: DatasetSpec) -> list[LabeledDataset]:
    """Builds the benchmark domains described by a dataset spec."""
    if spec.kind == DatasetKind.SYNTHETIC:
        return gen_synthetic_modes(spec.modes, spec.n_per_mode, Rng(spec.seed))
    loaded = load_te_domains(spec.path, spec.te, spec.normal_per_class, Rng(spec.seed))
    if loaded.dropped:
        log.warning("%d TE run(s) were dropped during ingestion.", loaded.dropped)
    return list(loaded.domains.values())


def split_domain(
    ds: LabeledDataset, train_fraction: float, rng: Rng
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/test split; unstratified if a class is too small."""
    indices = np.arange(ds.n)
    seed = rng.integer_seed()
    try:
        train, test = train_test_split(
            indices, train_size=train_fraction, stratify=ds.labels, random_state=seed
        )
    except ValueError:
        train, test = train_test_split(
            indices, train_size=train_fraction, random_state=seed
        )
    return ds.subset(np.sort(train)), ds.subset(np.sort(test))


def cell_data(
    cell: Cell, domains: dict[str, LabeledDataset], cfg: ExperimentConfig
) -> CellData:
    """Splits and standardizes the domains a cell touches.

    The scaler is fit on the labeled training data only: the source train
    splits, or the target train split for `target_only`.
    """
    names = list(domains)

    def split(name: str) -> tuple[LabeledDataset, LabeledDataset]:
        rng = Rng(cell.seed).child(SPLIT_STREAM, names.index(name))
        return split_domain(domains[name], cfg.split, rng)

    target_train, target_test = split(cell.target)
    sources = [split(name)[0] for name in cell.sources]
    labeled = [target_train] if cell.method == TARGET_ONLY else sources
    scaler = StandardScaler().fit(np.vstack([ds.features for ds in labeled]))

    def scaled(ds: LabeledDataset) -> LabeledDataset:
        return ds.with_features(scaler.transform(ds.features))

    return CellData(
        sources=[scaled(ds) for ds in sources],
        target_train=scaled(target_train),
        target_test=scaled(target_test),
    )


def run_cell(
    cell: Cell, domains: dict[str, LabeledDataset], cfg: ExperimentConfig
) -> ExperimentRecord:
    """Runs one cell; numerical and input failures become a failed record."""
    start = time.perf_counter()
    fields = {
        "method": cell.method,
        "sources": list(cell.sources),
        "target": cell.target,
        "seed": cell.seed,
    }
    try:
        data = cell_data(cell, domains, cfg)
        predictions, diagnostics = RUNNERS[cell.method](data, cfg, cell.seed)
        accuracy = float(np.mean(predictions == data.target_test.labels))
    except CELL_ERRORS as ex:
        log.warning("Cell %s failed: %s", cell.key, ex)
        return ExperimentRecord(
            **fields,
            status=CellStatus.FAILED,
            wall_time=time.perf_counter() - start,
            error=f"{type(ex).__name__}: {ex}",
        )
    log.info("Cell %s: accuracy %.4f", cell.key, accuracy)
    return ExperimentRecord(
        **fields,
        accuracy=accuracy,
        wall_time=time.perf_counter() - start,
        diagnostics={
            name: float(value)
            for name, value in diagnostics.items()
            if np.isfinite(value)
        },
    )


async def run_bounded(
    pending: Sequence[Awaitable[ExperimentRecord]], jobs: int
) -> list[ExperimentRecord]:
    """Awaits cell jobs with at most `jobs` in flight; results keep cell order."""
    slots = asyncio.Semaphore(jobs)

    async def in_slot(job: Awaitable[ExperimentRecord]) -> ExperimentRecord:
        async with slots:
            return await job

    return list(await asyncio.gather(*map(in_slot, pending)))


async def _run_cells(
    cells: Sequence[Cell],
    domains: dict[str, LabeledDataset],
    cfg: ExperimentConfig,
    store: Optional[RunStore],
    digest: str,
) -> list[ExperimentRecord]:
    """Runs cells in worker threads; stored successful records are reused."""

    async def run_one(cell: Cell) -> ExperimentRecord:
        if store is not None:
            cached = store.get(digest, cell.key)
            if cached is not None and cached.status == CellStatus.OK:
                log.debug("Reusing stored record for %s.", cell.key)
                return cached
        record = await asyncio.to_thread(run_cell, cell, domains, cfg)
        if store is not None:
            store.put(digest, record)
        return record

    return await run_bounded([run_one(cell) for cell in cells], cfg.jobs)


def _named_domains(
    cfg: ExperimentConfig, domains: Optional[Sequence[LabeledDataset]]
) -> dict[str, LabeledDataset]:
    if domains is None:
        domains = load_domains(cfg.dataset)
    named = {str(ds.domain_id): ds for ds in domains}
    if len(named) != len(domains):
        raise ConfigError("Domain ids must be unique.")
    if len({ds.class_count for ds in domains}) > 1:
        raise ConfigError("Domains disagree on class count.")
    return named


def _methods(cfg: ExperimentConfig, protocol: Protocol) -> list[str]:
    unknown = [
        name for name in cfg.methods if name not in RUNNERS or name in BASELINES
    ]
    if unknown:
        raise ConfigError(f"Unknown method(s): {', '.join(unknown)}.")
    if protocol == Protocol.MULTI_SOURCE:
        return list(cfg.methods)
    skipped = [name for name in cfg.methods if name in MULTI_SOURCE_METHODS]
    if skipped:
        log.warning(
            "Skipping multi-source method(s) in the pairwise protocol: %s",
            ", ".join(skipped),
        )
    return [name for name in cfg.methods if name in SINGLE_SOURCE_METHODS]


def pairwise_cells(
    names: Sequence[str], methods: Sequence[str], seeds: Sequence[int]
) -> list[Cell]:
    """Grid cells in (source, target, method, seed) order, baselines first."""
    cells = []
    for source in names:
        for target in names:
            baseline = TARGET_ONLY if source == target else SOURCE_ONLY
            for method in (baseline, *(methods if source != target else ())):
                cells.extend(Cell(method, (source,), target, seed) for seed in seeds)
    return cells


def multi_source_cells(
    names: Sequence[str], methods: Sequence[str], seeds: Sequence[int]
) -> list[Cell]:
    """Leave-one-domain-out cells in (target, method, seed) order."""
    cells = []
    for target in names:
        sources = tuple(name for name in names if name != target)
        cells.extend(Cell(TARGET_ONLY, (target,), target, seed) for seed in seeds)
        for method in (SOURCE_ONLY, *methods):
            cells.extend(Cell(method, sources, target, seed) for seed in seeds)
    return cells


def aggregate(records: Sequence[ExperimentRecord]) -> list[Aggregate]:
    """Per-(method, sources, target) accuracy mean and population std.

    Failed cells are counted but excluded from the statistics.
    """
    groups: dict[tuple[str, str, str], list[ExperimentRecord]] = {}
    for record in records:
        key = (record.method, "+".join(record.sources), record.target)
        groups.setdefault(key, []).append(record)

    aggregates = []
    for (method, sources, target), group in groups.items():
        ok = np.array(
            [rec.accuracy for rec in group if rec.status == CellStatus.OK],
            dtype=np.float64,
        )
        aggregates.append(
            Aggregate(
                method=method,
                sources=sources,
                target=target,
                mean=float(ok.mean()) if ok.size else None,
                std=float(ok.std()) if ok.size else None,
                n_ok=ok.size,
                n_failed=len(group) - ok.size,
            )
        )
    return aggregates


def _run_protocol(
    cfg: ExperimentConfig,
    protocol: Protocol,
    cells: Sequence[Cell],
    domains: dict[str, LabeledDataset],
    store: Optional[RunStore],
) -> ExperimentReport:
    digest = store.register(cfg) if store is not None else config_digest(cfg)
    records = asyncio.run(_run_cells(cells, domains, cfg, store, digest))
    failed = sum(record.status == CellStatus.FAILED for record in records)
    if failed:
        log.warning("%d of %d cells failed.", failed, len(records))
    return ExperimentReport(
        protocol=protocol,
        domains=list(domains),
        config_digest=digest,
        records=records,
        aggregates=aggregate(records),
        notes=[
            HELD_OUT_NOTE,
            f"train fraction per domain: {cfg.split}",
            f"seeds: {', '.join(str(seed) for seed in cfg.seeds)}",
        ],
    )


def run_baselines(
    cfg: ExperimentConfig,
    domains: Optional[Sequence[LabeledDataset]] = None,
    store: Optional[RunStore] = None,
) -> ExperimentReport:
    """Source-only and target-only accuracies under `cfg.protocol`.

    Pairwise: a grid with target-only on the diagonal and source-only off
    it. Multi-source: per target, source-only on the pooled other domains
    plus target-only.
    """
    named = _named_domains(cfg, domains)
    names = list(named)
    if cfg.protocol == Protocol.PAIRWISE:
        cells = pairwise_cells(names, [], cfg.seeds)
    else:
        cells = multi_source_cells(names, [], cfg.seeds)
    return _run_protocol(cfg, cfg.protocol, cells, named, store)


def run_pairwise(
    cfg: ExperimentConfig,
    domains: Optional[Sequence[LabeledDataset]] = None,
    store: Optional[RunStore] = None,
) -> ExperimentReport:
    """Every single-source method on every ordered pair of distinct domains.

    Raises:
        InputDomainError: With fewer than 2 domains.
    """
    named = _named_domains(cfg, domains)
    if len(named) < 2:
        raise InputDomainError("The pairwise protocol needs at least 2 domains.")
    cells = pairwise_cells(
        list(named), _methods(cfg, Protocol.PAIRWISE), cfg.seeds
    )
    return _run_protocol(cfg, Protocol.PAIRWISE, cells, named, store)


def run_multi_source(
    cfg: ExperimentConfig,
    domains: Optional[Sequence[LabeledDataset]] = None,
    store: Optional[RunStore] = None,
) -> ExperimentReport:
    """Leave-one-domain-out: each domain in turn is the unlabeled target.

    Single-source methods train on the pooled sources; multi-source methods
    keep one dataset per source.

    Raises:
        InputDomainError: With fewer than 3 domains.
    """
    named = _named_domains(cfg, domains)
    if len(named) < 3:
        raise InputDomainError("The multi-source protocol needs at least 3 domains.")
    cells = multi_source_cells(
        list(named), _methods(cfg, Protocol.MULTI_SOURCE), cfg.seeds
    )
    return _run_protocol(cfg, Protocol.MULTI_SOURCE, cells, named, store)


def run_experiment(
    cfg: ExperimentConfig,
    domains: Optional[Sequence[LabeledDataset]] = None,
    store: Optional[RunStore] = None,
) -> ExperimentReport:
    """Runs the protocol named by `cfg.protocol`."""
    if cfg.protocol == Protocol.PAIRWISE:
        return run_pairwise(cfg, domains, store)
    return run_multi_source(cfg, domains, store)


def accuracy_grid(report: ExperimentReport) -> pd.DataFrame:
    """Mean accuracy with (method, sources) rows and target columns."""
    rows = pd.DataFrame(
        [agg.dict() for agg in report.aggregates],
        columns=list(Aggregate.__fields__),
    )
    return _grid(rows, "mean", report.domains)


def delta_grid(report: ExperimentReport) -> pd.DataFrame:
    """Mean accuracy minus the source-only mean of the same (sources, target)."""
    rows = pd.DataFrame(
        [agg.dict() for agg in report.aggregates],
        columns=list(Aggregate.__fields__),
    )
    baseline = rows[rows["method"] == SOURCE_ONLY].set_index(["sources", "target"])
    adapted = rows[~rows["method"].isin(BASELINES)].copy()
    reference = baseline["mean"].reindex(
        pd.MultiIndex.from_frame(adapted[["sources", "target"]])
    )
    adapted["delta"] = adapted["mean"].to_numpy(dtype=float) - reference.to_numpy(
        dtype=float
    )
    return _grid(adapted, "delta", report.domains)


def averages(report: ExperimentReport) -> pd.DataFrame:
    """Per-method mean accuracy and mean delta over all of its filled cells."""
    accuracy = accuracy_grid(report)
    methods = list(dict.fromkeys(accuracy.index.get_level_values("method")))
    return pd.DataFrame(
        {
            "mean_accuracy": _method_means(accuracy, methods),
            "mean_delta": _method_means(delta_grid(report), methods),
        },
        index=pd.Index(methods, name="method"),
        dtype=float,
    )


def _method_means(grid: pd.DataFrame, methods: Sequence[str]) -> pd.Series:
    if grid.empty:
        return pd.Series(np.nan, index=methods, dtype=float)
    by_method = grid.groupby(level="method")
    totals = by_method.sum().sum(axis=1)
    counts = by_method.count().sum(axis=1)
    return (totals / counts).reindex(methods)


def _grid(rows: pd.DataFrame, value: str, domains: Sequence[str]) -> pd.DataFrame:
    order = list(dict.fromkeys(zip(rows["method"], rows["sources"])))
    index = pd.MultiIndex.from_arrays(
        [[method for method, _ in order], [sources for _, sources in order]],
        names=["method", "sources"],
    )
    if rows.empty:
        return pd.DataFrame(index=index, columns=list(domains), dtype=float)
    grid = rows.pivot(index=["method", "sources"], columns="target", values=value)
    grid = grid.reindex(index=index, columns=list(domains)).astype(float)
    return grid.rename_axis(columns=None)


def _write_csv(frame: pd.DataFrame, path: Path, notes: Sequence[str]) -> None:
    header = "".join(f"# {note}\n" for note in notes)
    body = frame.to_csv(float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    path.write_text(header + body)


def emit_report(
    report: ExperimentReport,
    out_dir: Union[str, PathLike],
    fmt: str = "csv",
    include_timing: bool = False,
) -> list[Path]:
    """Writes a report as JSON (`report.json`) or CSV grids.

    CSV output is `accuracy.csv` (sources as rows, targets as columns),
    `delta.csv` (accuracy minus source-only) and `averages.csv`, each
    preceded by `# ` note lines. Wall-clock times are left out unless
    `include_timing` is set, so re-emitting a report is byte-identical.

    Raises:
        ReportError: If the output directory cannot be written.
    """
    out_dir = Path(out_dir)
    notes = [f"protocol: {report.protocol.value}", *report.notes]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            exclude = None
            if not include_timing:
                exclude = {"records": {"__all__": {"wall_time"}}}
            path = out_dir / REPORT_JSON
            path.write_bytes(
                orjson.dumps(
                    report.dict(exclude=exclude),
                    default=str,
                    option=orjson.OPT_INDENT_2 | orjson.OPT_APPEND_NEWLINE,
                )
            )
            return [path]
        if fmt != "csv":
            raise ReportError(f'Unknown report format "{fmt}".')

        paths = [out_dir / "accuracy.csv", out_dir / "delta.csv"]
        _write_csv(accuracy_grid(report), paths[0], notes)
        _write_csv(delta_grid(report), paths[1], notes)
        paths.append(out_dir / "averages.csv")
        _write_csv(averages(report), paths[2], notes)
        if include_timing:
            paths.append(out_dir / "timing.csv")
            _write_csv(_timing(report), paths[3], notes)
        return paths
    except OSError as ex:
        raise ReportError(f"Failed to write report to {out_dir}.") from ex


def _timing(report: ExperimentReport) -> pd.DataFrame:
    frame = pd.DataFrame(
        [
            {"cell": record.cell, "wall_time": record.wall_time}
            for record in report.records
        ],
        columns=["cell", "wall_time"],
    )
    return frame.set_index("cell")


def load_report(path: Union[str, PathLike]) -> ExperimentReport:
    """Loads a JSON report (a `report.json` file or its directory).

    Raises:
        ReportError: If the report is missing or unreadable.
    """
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    try:
        return ExperimentReport.parse_obj(orjson.loads(path.read_bytes()))
    except (OSError, ValueError) as ex:
        raise ReportError(f"Failed to read report at {path}.") from ex

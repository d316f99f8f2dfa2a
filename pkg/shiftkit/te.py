"""Tennessee Eastman run ingestion and preprocessing.

One CSV file per run:

    mode,fault_class,run_id,sample_period_h
    <mode>,<fault_class>,<run_id>,<sample_period_h>
    <34 comma-separated reals: XME1..XME22, XMV1..XMV12>
    ...

Floats use '.' as the decimal separator regardless of locale.
"""
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from shiftkit.core import LabeledDataset, Rng
from shiftkit.datasets import extract_features
from shiftkit.exceptions import DataLoadError, InputDomainError, RunTooShortError
from shiftkit.schemas import TeSchema

log = logging.getLogger(__name__)

HEADER = ("mode", "fault_class", "run_id", "sample_period_h")
STD_FLOOR = 1e-12
DURATION_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class RawRun:
    """One simulated run: steps × variables, in engineering units."""

    series: np.ndarray
    mode: int
    fault_class: int
    run_id: str
    sample_period_h: float

    @property
    def n_steps(self) -> int:
        return self.series.shape[0]

    @property
    def duration_h(self) -> float:
        return self.n_steps * self.sample_period_h


@dataclass
class TeIngest:
    """Parsed runs (ordered by mode, fault, run id) and the incomplete-run count."""

    runs: list[RawRun] = field(default_factory=list)
    dropped: int = 0


@dataclass(frozen=True, eq=False)
class Segment:
    """A standardized window of one run with its class label."""

    values: np.ndarray
    label: int
    mode: int
    run_id: str


@dataclass
class TeDomains:
    """Feature-vector domains keyed by mode, plus every run left out of them.

    `dropped` counts incomplete simulations and runs too short to segment.
    """

    domains: dict[int, LabeledDataset] = field(default_factory=dict)
    dropped: int = 0


def _parse_meta(header: str, values: str, path: Path) -> dict[str, str]:
    columns = [col.strip() for col in header.split(",")]
    missing = [col for col in HEADER if col not in columns]
    if missing:
        raise DataLoadError(f"{path}: missing header column(s) {', '.join(missing)}.")
    fields = [val.strip() for val in values.split(",")]
    if len(fields) != len(columns):
        raise DataLoadError(
            f"expected {len(columns)} header values, got {len(fields)}", line=2
        )
    return dict(zip(columns, fields))


def _read_run(path: Path, schema: TeSchema) -> Optional[RawRun]:
    lines = path.read_text().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        return None
    if len(lines) < 2:
        raise DataLoadError(f"{path}: header values are missing.")

    meta = _parse_meta(lines[0], lines[1], path)
    try:
        mode = int(meta["mode"])
        fault_class = int(meta["fault_class"])
        sample_period_h = float(meta["sample_period_h"])
    except ValueError as ex:
        raise DataLoadError(f"malformed header values ({ex})", line=2) from ex
    if not 0 <= fault_class < schema.n_classes or sample_period_h <= 0:
        raise DataLoadError("fault class or sample period out of range", line=2)

    rows = pd.Series(lines[2:], dtype=object)
    if rows.empty:
        series = np.zeros((0, schema.n_vars))
    else:
        counts = rows.str.count(",") + 1
        bad_count = np.flatnonzero(counts.to_numpy() != schema.n_vars)
        if bad_count.size:
            idx = bad_count[0]
            raise DataLoadError(
                f"expected {schema.n_vars} values, got {counts.iloc[idx]}",
                line=int(idx) + 3,
            )
        frame = rows.str.split(",", expand=True)
        numeric = frame.apply(pd.to_numeric, errors="coerce")
        bad_value = np.flatnonzero(
            ~np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
        )
        if bad_value.size:
            raise DataLoadError(
                "non-numeric or non-finite value", line=int(bad_value[0]) + 3
            )
        series = numeric.to_numpy(dtype=np.float64)

    return RawRun(
        series=series,
        mode=mode,
        fault_class=fault_class,
        run_id=meta["run_id"],
        sample_period_h=sample_period_h,
    )


def load_te_csv(
    path: Union[str, PathLike], schema: TeSchema = TeSchema()
) -> TeIngest:
    """Loads one run file, or every `*.csv` file in a directory.

    Empty files are skipped. Runs shorter than `schema.expected_hours`
    (incomplete simulations) are dropped and counted.

    Raises:
        DataLoadError: On a malformed row (with its line number) or a
            missing header column.
    """
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    ingest = TeIngest()
    for file in files:
        run = _read_run(file, schema)
        if run is None:
            continue
        if (
            schema.expected_hours is not None
            and run.duration_h < schema.expected_hours - DURATION_SLACK
        ):
            log.warning(
                "Dropping incomplete run %s (%.3g h of %.3g h).",
                run.run_id,
                run.duration_h,
                schema.expected_hours,
            )
            ingest.dropped += 1
            continue
        ingest.runs.append(run)
    ingest.runs.sort(key=lambda run: (run.mode, run.fault_class, run.run_id))
    return ingest


def write_te_csv(run: RawRun, path: Union[str, PathLike]) -> None:
    """Writes a run in the format `load_te_csv` reads (17 significant digits)."""
    meta = f"{run.mode},{run.fault_class},{run.run_id},{run.sample_period_h!r}"
    body = pd.DataFrame(run.series).to_csv(
        header=False, index=False, float_format="%.17g", lineterminator="\n"
    )
    Path(path).write_text(",".join(HEADER) + "\n" + meta + "\n" + body)


def standardize(
    segment: np.ndarray, literal_variance: bool = False
) -> tuple[np.ndarray, list[int]]:
    """Standardizes each column by its own temporal mean and spread.

    The spread is the sample standard deviation (T − 1 denominator), or with
    `literal_variance` the square root of Σ(x − μ)² / (T(T − 1)). Columns
    with spread below 1e-12 are zeroed.

    Returns:
        The standardized segment and the indices of zeroed columns.
    """
    T = segment.shape[0]
    centered = segment - segment.mean(axis=0)
    variance = (centered**2).sum(axis=0) / (T - 1)
    if literal_variance:
        variance = variance / T
    std = np.sqrt(variance)
    flat = np.flatnonzero(std < STD_FLOOR)
    std[flat] = 1.0
    standardized = centered / std
    standardized[:, flat] = 0.0
    return standardized, flat.tolist()


def preprocess_run(
    run: RawRun, schema: TeSchema = TeSchema()
) -> tuple[Segment, Segment, list[str]]:
    """Cuts the normal and faulty windows of a run and standardizes each.

    The normal window is [0, w) and the faulty window [onset, onset + w),
    where w and onset are `schema.segment_hours` and
    `schema.fault_onset_hours` converted to steps at the run's own period.

    Returns:
        (normal segment labelled 0, faulty segment labelled with the run's
        fault class, flags naming zeroed variables).

    Raises:
        RunTooShortError: If the run cannot hold both windows.
    """
    width = int(round(schema.segment_hours / run.sample_period_h))
    onset = int(round(schema.fault_onset_hours / run.sample_period_h))
    if width < 2 or width > onset or onset + width > run.n_steps:
        raise RunTooShortError(
            f"Run {run.run_id} has {run.n_steps} steps; needs {onset + width} "
            f"with windows of {width} steps."
        )

    segments = []
    flags = []
    for name, start, label in (
        ("normal", 0, 0),
        ("faulty", onset, run.fault_class),
    ):
        values, flat = standardize(
            run.series[start : start + width], schema.literal_variance
        )
        flags.extend(
            f"{run.run_id}/{name}: {schema.variables[col]} is constant" for col in flat
        )
        segments.append(
            Segment(values=values, label=label, mode=run.mode, run_id=run.run_id)
        )
    return segments[0], segments[1], flags


def balance_normal_class(
    segments: Sequence[Segment], target: int, rng: Rng
) -> tuple[list[Segment], bool]:
    """Subsamples normal (class 0) segments down to `target`.

    Other segments keep their order. With fewer than `target` normals, all
    are kept and the result is flagged imbalanced.
    """
    normal = [idx for idx, seg in enumerate(segments) if seg.label == 0]
    if len(normal) < target:
        log.warning(
            "Only %d normal segments available (wanted %d).", len(normal), target
        )
        return list(segments), True
    keep = set(rng.generator.choice(normal, size=target, replace=False).tolist())
    kept = [
        seg for idx, seg in enumerate(segments) if seg.label != 0 or idx in keep
    ]
    return kept, False


def load_te_domains(
    path: Union[str, PathLike],
    schema: TeSchema = TeSchema(),
    normal_per_class: int = 100,
    rng: Rng = Rng(0),
) -> TeDomains:
    """Loads runs and builds one feature-vector domain per operating mode.

    Runs too short to segment are skipped and added to the incomplete-run
    count. Normal segments are balanced per mode using stream `mode` of `rng`.
    """
    ingest = load_te_csv(path, schema)
    total = len(ingest.runs) + ingest.dropped
    by_mode: dict[int, list[Segment]] = {}
    for run in ingest.runs:
        try:
            normal, faulty, flags = preprocess_run(run, schema)
        except RunTooShortError as ex:
            log.warning("Skipping run: %s", ex)
            ingest.dropped += 1
            continue
        for flag in flags:
            log.warning("Zeroed constant variable in %s", flag)
        by_mode.setdefault(run.mode, []).extend([normal, faulty])

    loaded = TeDomains(dropped=ingest.dropped)
    for mode in sorted(by_mode):
        segments, _ = balance_normal_class(
            by_mode[mode], normal_per_class, rng.child(mode)
        )
        if not segments:
            raise InputDomainError(f"Mode {mode} has no usable segments.")
        loaded.domains[mode] = LabeledDataset(
            features=np.stack([extract_features(seg.values) for seg in segments]),
            labels=[seg.label for seg in segments],
            class_count=schema.n_classes,
            domain_id=f"mode{mode}",
        )
    log.info(
        "Built %d TE domain(s) from %d run(s); dropped %d.",
        len(loaded.domains),
        total,
        loaded.dropped,
    )
    return loaded

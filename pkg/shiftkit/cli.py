"""CLI for running shiftkit benchmarks."""
import logging
import os
from pathlib import Path
from typing import Optional

import click
import orjson
import tomlkit
from pydantic import ValidationError

from shiftkit.bench import emit_report, load_report, run_experiment
from shiftkit.exceptions import ConfigError, ShiftKitError
from shiftkit.schemas import CellStatus, ExperimentConfig, ExperimentReport, Protocol
from shiftkit.store import STORE_FILENAME, RunStore

DEFAULT_OUTPUT_DIR = Path("shiftkit-results")
PROTOCOLS = {"pairwise": Protocol.PAIRWISE, "multi": Protocol.MULTI_SOURCE}


def load_config(path: Path) -> ExperimentConfig:
    """Loads an experiment configuration from a JSON or TOML file.

    Raises:
        ConfigError: If the file cannot be read, parsed, or validated.
    """
    try:
        raw = path.read_bytes()
    except IOError as ex:
        raise ConfigError(f"Failed to read configuration at {path}.") from ex

    try:
        if path.suffix == ".toml":
            data = tomlkit.parse(raw.decode("utf-8")).unwrap()
        else:
            data = orjson.loads(raw)
    except (tomlkit.exceptions.TOMLKitError, orjson.JSONDecodeError) as ex:
        raise ConfigError(f"Failed to parse configuration at {path}.") from ex

    try:
        config = ExperimentConfig.parse_obj(data)
    except ValidationError as ex:
        raise ConfigError(f"Invalid configuration at {path}:\n{ex}") from ex

    # Relative dataset paths are resolved against the configuration file.
    dataset_path = config.dataset.path
    if dataset_path is not None and not dataset_path.is_absolute():
        dataset = config.dataset.copy(update={"path": path.parent / dataset_path})
        config = config.copy(update={"dataset": dataset})
    return config


def parse_seeds(raw: str) -> list[int]:
    """Parses a comma-separated seed list such as `1,2,3`."""
    try:
        seeds = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as ex:
        raise click.BadParameter(f'"{raw}" is not a comma-separated list.') from ex
    if not seeds:
        raise click.BadParameter("At least one seed is required.")
    return seeds


def output_dir(out: Optional[Path], config: ExperimentConfig) -> Path:
    """`--out`, else the config's `output_dir`, else `SHIFTKIT_OUTPUT_DIR`."""
    if out is not None:
        return out
    if config.output_dir is not None:
        return config.output_dir
    return Path(os.getenv("SHIFTKIT_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log debug messages.")
@click.option("--quiet", "-q", is_flag=True, help="Log warnings and errors only.")
def cli(verbose: bool, quiet: bool):
    """Runs cross-domain adaptation benchmarks."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--protocol", type=click.Choice(sorted(PROTOCOLS)))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path))
@click.option("--seeds")
@click.option("--jobs", type=click.IntRange(min=1))
def run(
    config_path: Path,
    protocol: Optional[str],
    out: Optional[Path],
    seeds: Optional[str],
    jobs: Optional[int],
):
    """Runs a benchmark and writes its JSON and CSV reports."""
    try:
        config = load_config(config_path)
        overrides = {}
        if protocol is not None:
            overrides["protocol"] = PROTOCOLS[protocol]
        if seeds is not None:
            overrides["seeds"] = parse_seeds(seeds)
        if jobs is not None:
            overrides["jobs"] = jobs
        config = config.copy(update=overrides)

        out_dir = output_dir(out, config)
        out_dir.mkdir(parents=True, exist_ok=True)
        store = RunStore(out_dir / STORE_FILENAME)
        try:
            report = run_experiment(config, store=store)
        finally:
            store.close()
        paths = emit_report(report, out_dir, "json") + emit_report(
            report, out_dir, "csv"
        )
    except (ShiftKitError, OSError) as ex:
        raise click.ClickException(str(ex)) from ex

    failed = sum(record.status == CellStatus.FAILED for record in report.records)
    click.echo(f"{len(report.records)} cells ({failed} failed).")
    for path in paths:
        click.echo(str(path))


@cli.command()
@click.option(
    "--in",
    "in_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
)
@click.option(
    "--format", "fmt", type=click.Choice(["csv", "json"]), default="csv"
)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path))
@click.option("--timing", is_flag=True, help="Include stored wall-clock times.")
def report(in_dir: Path, fmt: str, out: Optional[Path], timing: bool):
    """Re-emits the report of a finished run."""
    try:
        loaded = load_report(in_dir)
        if timing:
            loaded = _with_timing(loaded, in_dir / STORE_FILENAME)
        paths = emit_report(loaded, out or in_dir, fmt, include_timing=timing)
    except ShiftKitError as ex:
        raise click.ClickException(str(ex)) from ex
    for path in paths:
        click.echo(str(path))


def _with_timing(report: ExperimentReport, store_path: Path) -> ExperimentReport:
    if report.config_digest is None or not store_path.is_file():
        raise ConfigError(f"No result store with timings at {store_path}.")
    store = RunStore(store_path)
    try:
        stored = store.records(report.config_digest)
    finally:
        store.close()
    records = [
        record.copy(update={"wall_time": stored[record.cell].wall_time})
        if record.cell in stored
        else record
        for record in report.records
    ]
    return report.copy(update={"records": records})


if __name__ == "__main__":
    cli()

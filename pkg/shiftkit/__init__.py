from shiftkit.bench import emit_report, run_experiment
from shiftkit.core import EmpiricalDistribution, LabeledDataset, Rng, SimplexWeights
from shiftkit.schemas import ExperimentConfig, ExperimentReport

__version__ = "0.1.0"

__all__ = [
    "EmpiricalDistribution",
    "ExperimentConfig",
    "ExperimentReport",
    "LabeledDataset",
    "Rng",
    "SimplexWeights",
    "emit_report",
    "run_experiment",
]

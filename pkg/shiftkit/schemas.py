"""Configuration and result schemas for shiftkit."""
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel as PydanticBaseModel
from pydantic import (
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    conint,
    confloat,
    root_validator,
    validator,
)

Fraction = confloat(gt=0, lt=1)

TE_VARIABLES = tuple(
    [f"XME{idx}" for idx in range(1, 23)] + [f"XMV{idx}" for idx in range(1, 13)]
)


class BaseModel(PydanticBaseModel):
    """Base model for shiftkit configuration objects."""

    class Config:
        frozen = True


class KernelKind(str, Enum):
    """Family of a positive-definite kernel."""

    LINEAR = "linear"
    RBF = "rbf"
    POLYNOMIAL = "polynomial"


class SolverKind(str, Enum):
    """Optimal transport solver."""

    EXACT = "exact"
    SINKHORN = "sinkhorn"


class LabelCost(str, Enum):
    """How label disagreement enters a labeled ground cost."""

    INDICATOR = "indicator"
    SQUARED_LABEL = "squared_label"


class HeadKind(str, Enum):
    """Output nonlinearity of a network head."""

    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"


class Protocol(str, Enum):
    """Benchmark protocol."""

    PAIRWISE = "pairwise"
    MULTI_SOURCE = "multi_source"


class CellStatus(str, Enum):
    """Outcome of a benchmark cell."""

    OK = "ok"
    FAILED = "failed"


class DatasetKind(str, Enum):
    """Where benchmark domains come from."""

    SYNTHETIC = "synthetic"
    TE = "te"


class KernelSpec(BaseModel):
    """A kernel for MMD and TCA.

    `sigma=None` selects the median pairwise-distance heuristic for RBF kernels.
    """

    kind: KernelKind = KernelKind.LINEAR
    sigma: Optional[PositiveFloat] = None
    degree: PositiveInt = 2
    offset: NonNegativeFloat = 1.0


class SolverSpec(BaseModel):
    """Optimal transport solver settings.

    `epsilon=None` selects 0.05 × mean(C) for Sinkhorn.
    """

    kind: SolverKind = SolverKind.EXACT
    epsilon: Optional[PositiveFloat] = None
    max_iter: PositiveInt = 1000
    tol: PositiveFloat = 1e-6


class TrainConfig(BaseModel):
    """Minibatch SGD settings."""

    lr: PositiveFloat = 0.05
    batch_size: PositiveInt = 64
    epochs: PositiveInt = 300
    weight_decay: NonNegativeFloat = 1e-4
    seed: int = 0


class HeadSpec(BaseModel):
    """An affine output head on top of the latent representation."""

    out_dim: PositiveInt
    kind: HeadKind = HeadKind.SOFTMAX


class Architecture(BaseModel):
    """Feed-forward network descriptor.

    The extractor is `input_dim → hidden_dims… → latent_dim` with ReLU after
    every affine layer. With no hidden layers and `latent_dim=None`, the
    extractor is the identity and every head is a plain affine model.
    """

    input_dim: PositiveInt
    hidden_dims: tuple[PositiveInt, ...] = (64, 64)
    latent_dim: Optional[PositiveInt] = 32
    heads: dict[str, HeadSpec]

    @root_validator(skip_on_failure=True)
    def check_extractor(cls, values):
        if values["hidden_dims"] and values["latent_dim"] is None:
            raise ValueError("Hidden layers require a latent dimension.")
        if not values["heads"]:
            raise ValueError("At least one head is required.")
        return values

    @classmethod
    def classifier(
        cls,
        input_dim: int,
        n_classes: int,
        *,
        hidden_dims: tuple[int, ...] = (64, 64),
        latent_dim: Optional[int] = 32,
        **extra_heads: HeadSpec,
    ) -> "Architecture":
        """Builds a single-extractor architecture with a `main` class head."""
        return cls(
            input_dim=input_dim,
            hidden_dims=hidden_dims,
            latent_dim=latent_dim,
            heads={"main": HeadSpec(out_dim=n_classes), **extra_heads},
        )

    @property
    def z_dim(self) -> int:
        return self.input_dim if self.latent_dim is None else self.latent_dim


class JdotConfig(BaseModel):
    """Joint distribution OT settings (ground cost α‖x−x′‖² + β L(y, h(x′)))."""

    alpha: NonNegativeFloat = 1.0
    beta: NonNegativeFloat = 1.0
    outer_iters: PositiveInt = 10
    warm_start_epochs: PositiveInt = 50
    inner_epochs: PositiveInt = 20
    max_rejections: conint(ge=0) = 3
    train: TrainConfig = TrainConfig()


class WjdotConfig(JdotConfig):
    """Weighted JDOT settings; adds the projected-gradient step on α."""

    alpha_step: PositiveFloat = 1.0
    max_backtracks: conint(ge=0) = 10


class TcaConfig(BaseModel):
    """Transfer component analysis settings."""

    kernel: KernelSpec = KernelSpec()
    mu: NonNegativeFloat = 1.0
    n_components: PositiveInt = 8


class DeepDaConfig(BaseModel):
    """Settings shared by the deep adapters.

    `lam` weighs the domain term against the source risk. The rest is read
    only by the adapter it belongs to.
    """

    lam: NonNegativeFloat = 1.0
    train: TrainConfig = TrainConfig()
    kernel: KernelSpec = KernelSpec(kind=KernelKind.RBF)
    lam_rev: NonNegativeFloat = 1.0
    holdout: Fraction = 0.2
    jdot_alpha: NonNegativeFloat = 1.0
    jdot_beta: NonNegativeFloat = 1.0
    moment_orders: tuple[PositiveInt, ...] = (1, 2)
    literal_pairwise_factor: bool = False


class WbtConfig(BaseModel):
    """Wasserstein barycenter transport settings."""

    beta: NonNegativeFloat = 10.0
    n_bary: Optional[PositiveInt] = None
    max_iter: PositiveInt = 30
    tol: PositiveFloat = 1e-6
    label_cost: LabelCost = LabelCost.INDICATOR
    solver: Optional[SolverSpec] = None


class DadilConfig(BaseModel):
    """Dataset dictionary learning settings.

    `n_atoms=None` uses one atom per source; `atom_size=None` uses the
    smallest domain size.
    """

    n_atoms: Optional[PositiveInt] = None
    atom_size: Optional[PositiveInt] = None
    beta: NonNegativeFloat = 1.0
    iters: PositiveInt = 50
    inner_iters: PositiveInt = 5
    atom_step: PositiveFloat = 0.5
    weight_step: PositiveFloat = 0.1
    label_cost: LabelCost = LabelCost.SQUARED_LABEL


class ModeSpec(BaseModel):
    """A synthetic operating mode: Gaussian classes pushed through x ↦ Ax + b."""

    class_means: list[list[float]]
    cov_scale: PositiveFloat = 1.0
    transform: Optional[list[list[float]]] = None
    offset: Optional[list[float]] = None
    priors: Optional[list[float]] = None

    @validator("class_means")
    def check_means(cls, means):
        if len(means) < 2:
            raise ValueError("At least two classes are required.")
        if len({len(mean) for mean in means}) != 1:
            raise ValueError("Class means disagree on dimension.")
        return means

    @root_validator(skip_on_failure=True)
    def check_mode(cls, values):
        dim = len(values["class_means"][0])
        n_classes = len(values["class_means"])
        transform = values.get("transform")
        if transform is not None:
            matrix = np.asarray(transform, dtype=float)
            if matrix.shape != (dim, dim):
                raise ValueError(f"Transform must be {dim} × {dim}.")
            if np.linalg.matrix_rank(matrix) < dim:
                raise ValueError("Transform must be invertible.")
        offset = values.get("offset")
        if offset is not None and len(offset) != dim:
            raise ValueError(f"Offset must have dimension {dim}.")
        priors = values.get("priors")
        if priors is not None:
            priors_arr = np.asarray(priors, dtype=float)
            if priors_arr.size != n_classes:
                raise ValueError(f"Expected {n_classes} priors.")
            if np.any(priors_arr < 0) or abs(priors_arr.sum() - 1) > 1e-9:
                raise ValueError("Priors must lie on the simplex.")
        return values

    @property
    def dim(self) -> int:
        return len(self.class_means[0])

    @property
    def n_classes(self) -> int:
        return len(self.class_means)


class TeSchema(BaseModel):
    """Layout and segmentation of Tennessee Eastman runs."""

    variables: tuple[str, ...] = TE_VARIABLES
    n_classes: PositiveInt = 29
    expected_hours: Optional[PositiveFloat] = 100.0
    fault_onset_hours: NonNegativeFloat = 30.0
    segment_hours: PositiveFloat = 30.0
    literal_variance: bool = False

    @property
    def n_vars(self) -> int:
        return len(self.variables)


class DatasetSpec(BaseModel):
    """Source of benchmark domains."""

    kind: DatasetKind = DatasetKind.SYNTHETIC
    modes: list[ModeSpec] = []
    n_per_mode: PositiveInt = 300
    seed: int = 0
    path: Optional[Path] = None
    normal_per_class: PositiveInt = 100
    te: TeSchema = TeSchema()

    @root_validator(skip_on_failure=True)
    def check_source(cls, values):
        if values["kind"] == DatasetKind.SYNTHETIC and not values["modes"]:
            raise ValueError("Synthetic datasets need at least one mode.")
        if values["kind"] == DatasetKind.TE and values["path"] is None:
            raise ValueError("TE datasets need a path.")
        return values


class ExperimentConfig(BaseModel):
    """A benchmark experiment.

    `train`, `hidden_dims` and `latent_dim` describe every classifier the
    benchmark trains, including those inside adapters; the `train` settings
    nested in per-method configs are replaced by `train` with the cell seed.
    """

    dataset: DatasetSpec
    protocol: Protocol = Protocol.PAIRWISE
    methods: list[str] = []
    seeds: list[int] = [1, 2, 3]
    split: Fraction = 0.7
    output_dir: Optional[Path] = None
    jobs: PositiveInt = 1
    train: TrainConfig = TrainConfig(epochs=100)
    hidden_dims: tuple[PositiveInt, ...] = (64, 64)
    latent_dim: PositiveInt = 32
    tca: TcaConfig = TcaConfig()
    jdot: JdotConfig = JdotConfig()
    wjdot: WjdotConfig = WjdotConfig()
    deep: DeepDaConfig = DeepDaConfig()
    wbt: WbtConfig = WbtConfig()
    dadil: DadilConfig = DadilConfig()

    @validator("seeds")
    def check_seeds(cls, seeds):
        if not seeds:
            raise ValueError("At least one seed is required.")
        return seeds


def cell_key(method: str, sources: Sequence[str], target: str, seed: int) -> str:
    """Identifies a benchmark cell, e.g. `otda|mode0|mode1|3`."""
    return f"{method}|{'+'.join(sources)}|{target}|{seed}"


class ExperimentRecord(BaseModel):
    """Outcome of one (method, sources, target, seed) cell."""

    method: str
    sources: list[str]
    target: str
    seed: int
    status: CellStatus = CellStatus.OK
    accuracy: Optional[confloat(ge=0, le=1)] = None
    wall_time: Optional[float] = None
    diagnostics: dict[str, float] = Field(default_factory=dict)
    error: Optional[str] = None

    @property
    def cell(self) -> str:
        return cell_key(self.method, self.sources, self.target, self.seed)


class Aggregate(BaseModel):
    """Mean and standard deviation of accuracy over seeds."""

    method: str
    sources: str
    target: str
    mean: Optional[float]
    std: Optional[float]
    n_ok: int
    n_failed: int


class ExperimentReport(BaseModel):
    """All records of a benchmark run plus provenance notes.

    `config_digest` keys the run's records in the result store.
    """

    protocol: Protocol
    domains: list[str]
    config_digest: Optional[str] = None
    records: list[ExperimentRecord] = []
    aggregates: list[Aggregate] = []
    notes: list[str] = []

"""Domain types shared by every shiftkit module."""
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np
import ot

from shiftkit.exceptions import InputDomainError

WEIGHT_TOL = 1e-9


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def one_hot(labels: Sequence[int], n_classes: int) -> np.ndarray:
    """Builds the one-hot matrix (n × `n_classes`) of a label vector.

    Raises:
        InputDomainError: If a label is negative or not below `n_classes`.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if n_classes < 1:
        raise InputDomainError("Class count must be positive.")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputDomainError(
            f"Labels must lie in [0, {n_classes - 1}], "
            f"but got range [{labels.min()}, {labels.max()}]."
        )
    encoded = np.zeros((labels.size, n_classes))
    encoded[np.arange(labels.size), labels] = 1.0
    return encoded


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix plus integer class labels for one domain.

    Arrays are copied on construction and made read-only.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    domain_id: Optional[Hashable] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2:
            raise InputDomainError("Features must be a matrix.")
        if not np.all(np.isfinite(features)):
            raise InputDomainError("Features contain NaN or infinite values.")

        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if labels.size != features.shape[0]:
            raise InputDomainError(
                f"Got {features.shape[0]} feature rows but {labels.size} labels."
            )
        one_hot(labels, self.class_count)  # range check

        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def one_hot(self) -> np.ndarray:
        return one_hot(self.labels, self.class_count)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        """Returns the rows at `indices`."""
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            class_count=self.class_count,
            domain_id=self.domain_id,
        )

    def with_features(self, features: np.ndarray) -> "LabeledDataset":
        """Returns a dataset with the same labels and new features."""
        return LabeledDataset(
            features=features,
            labels=self.labels,
            class_count=self.class_count,
            domain_id=self.domain_id,
        )


def concat(
    datasets: Iterable[LabeledDataset], domain_id: Optional[Hashable] = None
) -> LabeledDataset:
    """Concatenates datasets into one homogeneous domain."""
    datasets = list(datasets)
    if not datasets:
        raise InputDomainError("Cannot concatenate an empty list of datasets.")
    class_counts = {ds.class_count for ds in datasets}
    if len(class_counts) != 1:
        raise InputDomainError("Datasets disagree on class count.")
    return LabeledDataset(
        features=np.vstack([ds.features for ds in datasets]),
        labels=np.concatenate([ds.labels for ds in datasets]),
        class_count=datasets[0].class_count,
        domain_id=domain_id,
    )


def check_weights(weights: np.ndarray, name: str = "weights") -> np.ndarray:
    """Validates a probability vector (nonnegative, summing to 1)."""
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.size == 0:
        raise InputDomainError(f"Empty {name}.")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise InputDomainError(f"Negative or non-finite entries in {name}.")
    if abs(weights.sum() - 1.0) > WEIGHT_TOL:
        raise InputDomainError(f"{name} sum to {weights.sum()!r}, not 1.")
    return weights


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Weighted point cloud, optionally carrying soft labels (n × n_c)."""

    support: np.ndarray
    weights: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        support = np.array(self.support, dtype=np.float64)
        if support.ndim != 2:
            raise InputDomainError("Support must be a matrix.")
        weights = check_weights(self.weights)
        if weights.size != support.shape[0]:
            raise InputDomainError("Support and weights disagree on size.")
        object.__setattr__(self, "support", _frozen(support))
        object.__setattr__(self, "weights", _frozen(weights))

        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.float64)
            if labels.ndim != 2 or labels.shape[0] != support.shape[0]:
                raise InputDomainError("Soft labels must be an n × n_c matrix.")
            object.__setattr__(self, "labels", _frozen(labels))

    @classmethod
    def uniform(
        cls, support: np.ndarray, labels: Optional[np.ndarray] = None
    ) -> "EmpiricalDistribution":
        n = np.asarray(support).shape[0]
        if n == 0:
            raise InputDomainError(
                "Cannot build an empirical distribution on 0 points."
            )
        return cls(support=support, weights=np.full(n, 1 / n), labels=labels)

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @property
    def class_count(self) -> Optional[int]:
        return None if self.labels is None else self.labels.shape[1]

    def hard_labels(self) -> np.ndarray:
        """Argmax of the soft labels (ties to the lowest class index)."""
        if self.labels is None:
            raise InputDomainError("Distribution carries no labels.")
        return np.argmax(self.labels, axis=1)

    def to_dataset(self, domain_id: Optional[Hashable] = None) -> LabeledDataset:
        """Hardens soft labels into a `LabeledDataset` (weights are dropped)."""
        return LabeledDataset(
            features=self.support,
            labels=self.hard_labels(),
            class_count=self.class_count,
            domain_id=domain_id,
        )


def as_empirical(ds: LabeledDataset) -> EmpiricalDistribution:
    """Uniform empirical distribution on a dataset's features.

    Labels ride along as one-hot soft labels; the support is the feature
    matrix itself.

    Raises:
        InputDomainError: If the dataset is empty.
    """
    if ds.n == 0:
        raise InputDomainError("Cannot build an empirical distribution on 0 points.")
    return EmpiricalDistribution(
        support=ds.features, weights=np.full(ds.n, 1 / ds.n), labels=ds.one_hot
    )


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    """Barycentric coordinates on the probability simplex."""

    values: np.ndarray

    def __post_init__(self):
        values = check_weights(self.values, "simplex weights").copy()
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def uniform(cls, k: int) -> "SimplexWeights":
        if k < 1:
            raise InputDomainError("Simplex dimension must be positive.")
        return cls(np.full(k, 1 / k))

    @classmethod
    def vertex(cls, k: int, index: int) -> "SimplexWeights":
        values = np.zeros(k)
        values[index] = 1.0
        return cls(values)

    @classmethod
    def project(cls, values: np.ndarray) -> "SimplexWeights":
        """Euclidean projection of an arbitrary vector onto the simplex."""
        projected = ot.utils.proj_simplex(np.asarray(values, dtype=np.float64))
        return cls(projected / projected.sum())

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, index: int) -> float:
        return float(self.values[index])


@dataclass(frozen=True)
class Rng:
    """Counter-based random stream keyed by (seed, stream index).

    Children derived with `child()` are independent of each other and of
    their parent, so parallel work can split streams deterministically.
    """

    seed: int
    stream: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(int(self.seed), spawn_key=tuple(self.stream))
        generator = np.random.Generator(np.random.Philox(seq))
        object.__setattr__(self, "generator", generator)

    def child(self, *index: int) -> "Rng":
        return Rng(self.seed, tuple(self.stream) + tuple(int(i) for i in index))

    def integer_seed(self) -> int:
        """Draws a 31-bit seed for libraries that take an integer."""
        return int(self.generator.integers(2**31 - 1))

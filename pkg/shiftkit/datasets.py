"""Synthetic multi-mode benchmarks and fixed-length segment features."""
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from shiftkit.core import LabeledDataset, Rng
from shiftkit.exceptions import InputDomainError, UnsupportedModeError
from shiftkit.schemas import ModeSpec

FEATURES_PER_CHANNEL = 5


def gen_synthetic_modes(
    specs: Sequence[ModeSpec], n_per_mode: int, rng: Rng
) -> list[LabeledDataset]:
    """Samples one labeled domain per operating mode.

    Labels are drawn from the mode's priors (uniform if unset); each sample is
    μ_y + √cov_scale · N(0, I), pushed through x ↦ Ax + b. Mode `i` uses
    stream `i` of `rng`, so adding modes does not perturb earlier ones.

    Raises:
        InputDomainError: If modes disagree on dimension or class count.
    """
    if not specs:
        return []
    if len({(spec.dim, spec.n_classes) for spec in specs}) != 1:
        raise InputDomainError("Modes disagree on dimension or class count.")

    datasets = []
    for idx, spec in enumerate(specs):
        generator = rng.child(idx).generator
        means = np.asarray(spec.class_means, dtype=np.float64)
        priors = (
            np.full(spec.n_classes, 1 / spec.n_classes)
            if spec.priors is None
            else np.asarray(spec.priors, dtype=np.float64)
        )
        labels = generator.choice(spec.n_classes, size=n_per_mode, p=priors)
        base = means[labels] + np.sqrt(spec.cov_scale) * generator.standard_normal(
            (n_per_mode, spec.dim)
        )
        if spec.transform is not None:
            base = base @ np.asarray(spec.transform, dtype=np.float64).T
        if spec.offset is not None:
            base = base + np.asarray(spec.offset, dtype=np.float64)
        datasets.append(
            LabeledDataset(
                features=base,
                labels=labels,
                class_count=spec.n_classes,
                domain_id=f"mode{idx}",
            )
        )
    return datasets


def bayes_accuracy(spec: ModeSpec) -> float:
    """Closed-form Bayes-optimal accuracy of a two-class mode.

    Invertible affine maps preserve the optimal accuracy, so only the class
    means, the shared isotropic covariance, and the priors matter.

    Raises:
        UnsupportedModeError: For more than two classes.
    """
    if spec.n_classes != 2:
        raise UnsupportedModeError(
            "Closed-form Bayes accuracy is only available for two classes."
        )
    priors = spec.priors or [0.5, 0.5]
    if min(priors) == 0:
        return 1.0
    means = np.asarray(spec.class_means, dtype=np.float64)
    gap = np.linalg.norm(means[1] - means[0]) / np.sqrt(spec.cov_scale)
    if gap == 0:
        return float(max(priors))
    cut = gap / 2 + np.log(priors[0] / priors[1]) / gap
    return float(priors[0] * norm.cdf(cut) + priors[1] * norm.cdf(gap - cut))


def translation_family(
    n_modes: int = 5,
    n_classes: int = 3,
    dim: int = 2,
    radius: float = 3.0,
    shift: float = 2.5,
    cov_scale: float = 0.5,
    priors: Optional[list[float]] = None,
) -> list[ModeSpec]:
    """Modes sharing class means on a circle, each translated along the first axis.

    Mode `i` is offset by (i − (n_modes − 1)/2)·`shift`, so the family is
    centered on the untranslated problem.
    """
    if dim < 2:
        raise InputDomainError("Translation family needs at least 2 dimensions.")
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    specs = []
    for idx in range(n_modes):
        offset = np.zeros(dim)
        offset[0] = (idx - (n_modes - 1) / 2) * shift
        specs.append(
            ModeSpec(
                class_means=means.tolist(),
                cov_scale=cov_scale,
                offset=offset.tolist(),
                priors=priors,
            )
        )
    return specs


def extract_features(segment: np.ndarray) -> np.ndarray:
    """Per-channel (mean, std, min, max, slope) of a T × C segment.

    The std uses the T − 1 denominator; the slope is the least-squares
    trend against the step index. Blocks are laid out channel by channel.

    Raises:
        InputDomainError: If the segment has fewer than 2 steps.
    """
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim != 2 or segment.shape[0] < 2:
        raise InputDomainError("Feature extraction needs a T × C segment with T ≥ 2.")
    steps = np.arange(segment.shape[0], dtype=np.float64)
    steps -= steps.mean()
    mean = segment.mean(axis=0)
    slope = steps @ (segment - mean) / (steps @ steps)
    stats = np.stack(
        [
            mean,
            segment.std(axis=0, ddof=1),
            segment.min(axis=0),
            segment.max(axis=0),
            slope,
        ],
        axis=1,
    )
    return stats.reshape(-1)

"""Shared decorators and helpers for domain adapters."""
from functools import wraps
from typing import Callable, Sequence

import numpy as np

from shiftkit.core import LabeledDataset
from shiftkit.exceptions import AdaptationError, InputDomainError


def adapter_errors(name: str) -> Callable:
    """Decorator for translating numerical failures into `AdaptationError`."""

    def adapter_errors_decorator(func: Callable) -> Callable:
        @wraps(func)
        def adapter_errors_wrapper(*args, **kwargs):
            try:
                with np.errstate(over="raise"):
                    return func(*args, **kwargs)
            except np.linalg.LinAlgError as ex:
                raise AdaptationError(f"{name}: linear algebra failure ({ex}).") from ex
            except FloatingPointError as ex:
                raise AdaptationError(f"{name}: floating-point failure ({ex}).") from ex

        return adapter_errors_wrapper

    return adapter_errors_decorator


def multi_source(min_sources: int = 2) -> Callable:
    """Decorator for adapters that need a list of at least `min_sources` sources.

    The decorated function takes the source list as its first argument.
    """

    def multi_source_decorator(func: Callable) -> Callable:
        @wraps(func)
        def multi_source_wrapper(sources: Sequence[LabeledDataset], *args, **kwargs):
            if len(sources) < min_sources:
                raise InputDomainError(
                    f"{func.__name__} needs at least {min_sources} source domain(s), "
                    f"got {len(sources)}."
                )
            class_counts = {ds.class_count for ds in sources}
            if len(class_counts) != 1:
                raise InputDomainError("Source domains disagree on class count.")
            return func(sources, *args, **kwargs)

        return multi_source_wrapper

    return multi_source_decorator


def target_features(target) -> np.ndarray:
    """Unlabeled target features (labels, if present, are ignored)."""
    if isinstance(target, LabeledDataset):
        return target.features
    features = np.asarray(target, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise InputDomainError("Target features must be a nonempty matrix.")
    return features

"""Transfer component analysis."""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from shiftkit.adapters.base import adapter_errors, target_features
from shiftkit.core import LabeledDataset
from shiftkit.divergences import kernel_matrix, mmd_weights, resolve_kernel
from shiftkit.exceptions import InputDomainError, UnsupportedModeError
from shiftkit.schemas import KernelSpec

log = logging.getLogger(__name__)

RIDGE = 1e-8
RESIDUAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class TcaModel:
    """Fitted transfer components.

    `joint` is the source-then-target training sample the kernel rows are
    formed against; `W` has one column per retained component.
    """

    W: np.ndarray
    joint: np.ndarray
    kernel: KernelSpec
    mu: float
    eigenvalues: np.ndarray
    n_source: int

    @property
    def n_components(self) -> int:
        return self.W.shape[1]


@adapter_errors("TCA")
def tca_fit(
    source: np.ndarray,
    target: np.ndarray,
    kernel: KernelSpec = KernelSpec(),
    mu: float = 1.0,
    n_components: int = 8,
) -> TcaModel:
    """Fits transfer components on the joint source + target sample.

    Solves (I + μKLK) w = λ (KHK) w for the smallest λ. KHK is singular,
    so it is ridged by 1e-8·I and whitened through its eigendecomposition;
    directions at ridge level carry no variance and are discarded. Of the
    remaining eigenpairs, only those meeting the residual check
    ‖(I + μKLK) w − λ KHK w‖ ≤ 1e-6 ‖w‖ are retained, so the effective
    number of components may fall below `n_components`.

    Raises:
        InputDomainError: If `n_components` exceeds n_S + n_T or μ < 0.
    """
    X_s = target_features(source)
    X_t = target_features(target)
    n = X_s.shape[0] + X_t.shape[0]
    if n_components > n:
        raise InputDomainError(
            f"Cannot extract {n_components} components from {n} samples."
        )
    if mu < 0:
        raise InputDomainError(f"TCA penalty μ must be nonnegative (got {mu}).")

    joint = np.vstack([X_s, X_t])
    kernel = resolve_kernel(kernel, joint)
    K = kernel_matrix(kernel, joint, joint)
    L = mmd_weights(X_s.shape[0], X_t.shape[0])
    H = np.eye(n) - np.full((n, n), 1 / n)
    A = np.eye(n) + mu * K @ L @ K
    KHK = K @ H @ K
    KHK = (KHK + KHK.T) / 2

    spectrum, basis = scipy.linalg.eigh(KHK + RIDGE * np.eye(n))
    keep = spectrum > RIDGE * (1 + 1e-3) + 1e-12 * spectrum.max(initial=0.0)
    if not np.any(keep):
        raise InputDomainError("Joint sample has no variance to project onto.")
    whiten = basis[:, keep] / np.sqrt(spectrum[keep])
    reduced = whiten.T @ A @ whiten
    eigenvalues, vectors = scipy.linalg.eigh((reduced + reduced.T) / 2)
    candidates = whiten @ vectors

    retained = []
    for idx in range(candidates.shape[1]):
        w = candidates[:, idx]
        residual = np.linalg.norm(A @ w - eigenvalues[idx] * KHK @ w)
        if residual <= RESIDUAL_TOL * np.linalg.norm(w):
            retained.append(idx)
        if len(retained) == n_components:
            break
    if len(retained) < n_components:
        log.info(
            "TCA retained %d of %d requested components.", len(retained), n_components
        )

    return TcaModel(
        W=candidates[:, retained],
        joint=joint,
        kernel=kernel,
        mu=mu,
        eigenvalues=eigenvalues[retained],
        n_source=X_s.shape[0],
    )


def tca_transform(model: TcaModel, X: np.ndarray, extend: bool = False) -> np.ndarray:
    """Projects rows onto the transfer components, T(X) = k(X, joint) W.

    Without `extend`, every row must belong to the training joint sample.

    Raises:
        UnsupportedModeError: If a row is out of sample and `extend` is off.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not extend:
        known = {row.tobytes() for row in model.joint}
        if any(row.tobytes() not in known for row in X):
            raise UnsupportedModeError(
                "TCA is transductive: rows outside the fitted joint sample need "
                "kernel extension (extend=True)."
            )
    return kernel_matrix(model.kernel, X, model.joint) @ model.W


def tca_adapt(
    source: LabeledDataset,
    target: np.ndarray,
    kernel: KernelSpec = KernelSpec(),
    mu: float = 1.0,
    n_components: int = 8,
) -> tuple[LabeledDataset, np.ndarray, TcaModel]:
    """Fits TCA and returns the projected source dataset and target features."""
    model = tca_fit(source.features, target_features(target), kernel, mu, n_components)
    projected = tca_transform(model, model.joint)
    return (
        source.with_features(projected[: model.n_source]),
        projected[model.n_source :],
        model,
    )

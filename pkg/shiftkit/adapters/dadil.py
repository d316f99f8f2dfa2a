"""Dataset dictionary learning (DaDiL) with its reconstruction and ensemble readouts.

A dictionary is a set of K labeled atoms plus one simplex weight vector per
domain (sources first, target last). Each domain is approximated by the
labeled Wasserstein barycenter of the atoms under its weights.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import ot

from shiftkit.adapters.base import adapter_errors, multi_source, target_features
from shiftkit.classifiers import FeedForwardNet, train_erm
from shiftkit.core import (
    EmpiricalDistribution,
    LabeledDataset,
    Rng,
    SimplexWeights,
    as_empirical,
)
from shiftkit.exceptions import InputDomainError
from shiftkit.schemas import Architecture, DadilConfig, LabelCost, TrainConfig
from shiftkit.transport import (
    TransportPlan,
    barycentric_map,
    cost_matrix,
    default_solver,
    free_support_barycenter,
    labeled_cost_matrix,
    solve_ot,
)

log = logging.getLogger(__name__)

RECONSTRUCTION_ITERS = 30


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Atoms Q_1..Q_K and weights α_1..α_{N+1} (the target's last)."""

    atoms: list[EmpiricalDistribution]
    weights: list[SimplexWeights]
    beta: float = 1.0
    label_cost: LabelCost = LabelCost.SQUARED_LABEL

    def __post_init__(self):
        if not self.atoms:
            raise InputDomainError("A dictionary needs at least one atom.")
        if len({(atom.n, atom.dim) for atom in self.atoms}) != 1:
            raise InputDomainError("Atoms disagree on size or feature dimension.")
        if any(atom.labels is None for atom in self.atoms):
            raise InputDomainError("Atoms must carry soft labels.")
        if len({atom.class_count for atom in self.atoms}) != 1:
            raise InputDomainError("Atoms disagree on class count.")
        if any(len(w) != len(self.atoms) for w in self.weights):
            raise InputDomainError("Every weight vector needs one entry per atom.")
        object.__setattr__(self, "label_cost", LabelCost(self.label_cost))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def atom_size(self) -> int:
        return self.atoms[0].n

    @property
    def target_weights(self) -> SimplexWeights:
        return self.weights[-1]


def pseudo_label_target(
    sources: Sequence[LabeledDataset], target: np.ndarray
) -> np.ndarray:
    """Soft target labels n_T · πᵀY averaged over sources.

    π is the uniform-marginal OT plan from each source to the target on
    features alone. Rows are renormalized to sum to 1.
    """
    X_t = target_features(target)
    n_t = X_t.shape[0]
    labels = np.zeros((n_t, sources[0].class_count))
    for ds in sources:
        plan = solve_ot(
            np.full(ds.n, 1 / ds.n),
            np.full(n_t, 1 / n_t),
            cost_matrix(ds.features, X_t),
            default_solver(ds.n, n_t),
        )
        labels += n_t * plan.values.T @ ds.one_hot / len(sources)
    return labels / labels.sum(axis=1, keepdims=True)


def reconstruct(
    dictionary: Dictionary,
    alpha: SimplexWeights,
    rng: Rng,
    max_iter: int = RECONSTRUCTION_ITERS,
    init: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> EmpiricalDistribution:
    """The barycenter B(α; Q).

    A vertex α returns its atom unchanged. Otherwise the fixed point starts
    from `init`, or from the atom with the largest weight.
    """
    active = np.flatnonzero(alpha.values > 0)
    if active.size == 1:
        return dictionary.atoms[active[0]]
    if init is None:
        lead = dictionary.atoms[int(np.argmax(alpha.values))]
        init = (lead.support, lead.labels)
    barycenter = free_support_barycenter(
        dictionary.atoms,
        alpha,
        dictionary.beta,
        dictionary.atom_size,
        rng,
        max_iter,
        label_mode=dictionary.label_cost,
        init=init,
    )
    return barycenter.distribution


def _labeled_plan(
    P: EmpiricalDistribution, Q: EmpiricalDistribution, beta: float, mode: LabelCost
) -> TransportPlan:
    return solve_ot(
        P.weights,
        Q.weights,
        labeled_cost_matrix(P, Q, beta, mode),
        default_solver(P.n, Q.n),
    )


def _initial_atoms(
    sources: Sequence[LabeledDataset], n_atoms: int, atom_size: int, rng: Rng
) -> list[EmpiricalDistribution]:
    """Gaussian atoms at the pooled mean and spread, with balanced one-hot labels."""
    pooled = np.vstack([ds.features for ds in sources])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    n_classes = sources[0].class_count
    labels = np.zeros((atom_size, n_classes))
    labels[np.arange(atom_size), np.arange(atom_size) % n_classes] = 1.0
    atoms = []
    for k in range(n_atoms):
        noise = rng.child(k).generator.standard_normal((atom_size, pooled.shape[1]))
        atoms.append(EmpiricalDistribution.uniform(mean + std * noise, labels))
    return atoms


@dataclass
class DadilResult:
    """A fitted dictionary and its per-iteration reconstruction loss."""

    dictionary: Dictionary
    losses: list[float] = field(default_factory=list)


@adapter_errors("DaDiL")
@multi_source(1)
def dadil_fit(
    sources: Sequence[LabeledDataset],
    target: np.ndarray,
    cfg: DadilConfig = DadilConfig(),
    rng: Rng = Rng(0),
) -> DadilResult:
    """Learns atoms and weights so each domain is close to its barycenter.

    The target enters as the last domain, labelled once by
    `pseudo_label_target`. Every outer iteration:

    1. reconstructs each domain ℓ as B(α_ℓ; Q), warm-started from the
       previous iteration, and solves the labeled OT plan to P̂_ℓ;
    2. moves every atom point along the plan displacements of the
       barycenter points it feeds, α-weighted over domains (step
       `cfg.atom_step`), and projects its soft labels back onto the simplex;
    3. takes one entropic mirror-descent step (`cfg.weight_step`) on each
       α_ℓ along the sup-normalized transport-cost gradient.

    The loss is (1/(N+1)) Σ_ℓ W_c(P̂_ℓ, B(α_ℓ; Q)), recorded at step 1.

    Raises:
        InputDomainError: If there are more atoms than samples, or atoms
            smaller than the class count.
    """
    X_t = target_features(target)
    domains = [as_empirical(ds) for ds in sources]
    domains.append(
        EmpiricalDistribution.uniform(X_t, pseudo_label_target(sources, X_t))
    )
    n_classes = sources[0].class_count
    n_atoms = cfg.n_atoms or len(sources)
    atom_size = cfg.atom_size or min(domain.n for domain in domains)
    total = sum(domain.n for domain in domains)
    if n_atoms > total:
        raise InputDomainError(
            f"Cannot learn {n_atoms} atoms from {total} samples."
        )
    if atom_size < n_classes:
        raise InputDomainError(
            f"Atom size {atom_size} is below the class count {n_classes}."
        )

    dictionary = Dictionary(
        atoms=_initial_atoms(sources, n_atoms, atom_size, rng.child(0)),
        weights=[SimplexWeights.uniform(n_atoms) for _ in domains],
        beta=cfg.beta,
        label_cost=cfg.label_cost,
    )
    label_factor = cfg.beta
    if cfg.label_cost == LabelCost.INDICATOR:
        label_factor = cfg.beta / 2
    warm: list[Optional[tuple[np.ndarray, np.ndarray]]] = [None] * len(domains)
    losses = []

    for it in range(cfg.iters):
        bary_rng = rng.child(1, it)
        shift_x = [np.zeros((atom_size, atom.dim)) for atom in dictionary.atoms]
        shift_y = [np.zeros((atom_size, n_classes)) for _ in dictionary.atoms]
        mass = np.zeros(n_atoms)
        weights = []
        loss = 0.0

        for ell, domain in enumerate(domains):
            alpha = dictionary.weights[ell]
            B = reconstruct(dictionary, alpha, bary_rng, cfg.inner_iters, warm[ell])
            warm[ell] = (B.support, B.labels)
            plan = _labeled_plan(B, domain, cfg.beta, cfg.label_cost)
            loss += plan.cost / len(domains)
            delta_x = barycentric_map(plan, domain.support) - B.support
            delta_y = barycentric_map(plan, domain.labels) - B.labels

            grad = np.zeros(n_atoms)
            for k, atom in enumerate(dictionary.atoms):
                atom_plan = _labeled_plan(B, atom, cfg.beta, cfg.label_cost)
                grad[k] = -2 * (
                    np.sum(delta_x * barycentric_map(atom_plan, atom.support))
                    + label_factor
                    * np.sum(delta_y * barycentric_map(atom_plan, atom.labels))
                ) / atom_size
                if alpha[k] > 0:
                    pulled = atom_plan.values.T
                    shift_x[k] += alpha[k] * barycentric_map(pulled, delta_x)
                    shift_y[k] += alpha[k] * barycentric_map(pulled, delta_y)
                    mass[k] += alpha[k]

            scale = np.abs(grad).max()
            if scale > 0:
                grad = grad / scale
            values = alpha.values * np.exp(-cfg.weight_step * grad)
            weights.append(SimplexWeights(values / values.sum()))
        losses.append(loss)

        atoms = []
        for k, atom in enumerate(dictionary.atoms):
            if mass[k] == 0:
                atoms.append(atom)
                continue
            support = atom.support + cfg.atom_step * shift_x[k] / mass[k]
            labels = atom.labels + cfg.atom_step * shift_y[k] / mass[k]
            labels = ot.utils.proj_simplex(labels.T).T
            atoms.append(EmpiricalDistribution.uniform(support, labels))
        dictionary = Dictionary(
            atoms=atoms,
            weights=weights,
            beta=cfg.beta,
            label_cost=cfg.label_cost,
        )

    return DadilResult(dictionary=dictionary, losses=losses)


def dadil_r_transform(
    dictionary: Dictionary,
    rng: Rng = Rng(0),
    max_iter: int = RECONSTRUCTION_ITERS,
) -> LabeledDataset:
    """Labeled reconstruction B(α_T; Q) of the target, hardened by argmax."""
    reconstruction = reconstruct(dictionary, dictionary.target_weights, rng, max_iter)
    return reconstruction.to_dataset()


def train_atomic_classifiers(
    dictionary: Dictionary,
    cfg: TrainConfig,
    architecture: Optional[Architecture] = None,
) -> list[FeedForwardNet]:
    """One classifier per atom, trained on the atom's hardened labels."""
    nets = []
    for k, atom in enumerate(dictionary.atoms):
        architecture = architecture or Architecture.classifier(
            atom.dim, atom.class_count
        )
        init = FeedForwardNet.initialize(architecture, Rng(cfg.seed).child(1, k))
        nets.append(train_erm(init, atom.to_dataset(), cfg).net)
    return nets


def dadil_e_predict(
    dictionary: Dictionary, nets: Sequence[FeedForwardNet], X: np.ndarray
) -> np.ndarray:
    """Σ_k α_T,k ĥ_k(x); rows are probability vectors."""
    if len(nets) != dictionary.n_atoms:
        raise InputDomainError(
            f"Expected {dictionary.n_atoms} atomic classifiers, got {len(nets)}."
        )
    alpha = dictionary.target_weights
    return sum(alpha[k] * net.forward(X) for k, net in enumerate(nets))

"""Kernel-smoothed MDP estimation from transition samples.

A kernel scores similarity between states; transition rows and costs for each
(state, group) pair are kernel-weighted averages over the observed samples.
Each sample's target mass is normalized by the target kernel's total mass so
every sample contributes one unit of probability; with singleton blocks the
estimates reduce exactly to empirical conditional frequencies and means.

Fallbacks when a (state, group) pair has no kernel mass: pool the samples
over all groups; if still empty, the state keeps a zero-cost self-loop (we
know nothing about it, and a priced self-loop would make undiscounted value
iteration diverge).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionError, EstimationError
from .ingest import TransitionDataset
from .spectral import SpectralFeatures, StatePartition
from .states import StateSpace


class KernelVariant(str, Enum):
    PARTITION = "partition"
    SPECTRAL = "spectral"


@dataclass
class KernelSpec:
    """Similarity kernel over states.

    PARTITION: indicator of same block (terminal matches only itself).
    SPECTRAL: inner product of spectral feature rows, clamped at zero from
    below unless clamp_negative is disabled.
    """

    variant: KernelVariant
    partition: StatePartition | None = None
    features: SpectralFeatures | None = None
    clamp_negative: bool = True

    def __post_init__(self):
        if self.variant == KernelVariant.PARTITION and self.partition is None:
            raise EstimationError("PARTITION kernel needs a partition")
        if self.variant == KernelVariant.SPECTRAL and self.features is None:
            raise EstimationError("SPECTRAL kernel needs features")

    def matrix(self) -> np.ndarray:
        """Dense kernel matrix over the full state space."""
        if self.variant == KernelVariant.PARTITION:
            labels = self.partition.labels
            return (labels[:, None] == labels[None, :]).astype(np.float64)
        rows = self.features.features
        gram = rows @ rows.T
        if self.clamp_negative:
            np.maximum(gram, 0.0, out=gram)
        return gram


def kernel_eval(spec: KernelSpec, s1: int, s2: int) -> float:
    """Kernel value for one state pair."""
    if spec.variant == KernelVariant.PARTITION:
        return float(spec.partition.labels[s1] == spec.partition.labels[s2])
    value = float(spec.features.features[s1] @ spec.features.features[s2])
    if spec.clamp_negative:
        value = max(value, 0.0)
    return value


@dataclass
class EmpiricalMdp:
    """Estimated finite MDP: transition tensor, cost table, state keys.

    transition has shape (n_groups, n_states, n_states) with stochastic rows;
    cost has shape (n_states, n_groups). The terminal state absorbs at zero
    cost under every group.
    """

    space: StateSpace
    n_groups: int
    transition: np.ndarray
    cost: np.ndarray
    provenance: dict = field(default_factory=dict)

    def validate(self, atol: float = 1e-9) -> None:
        n = self.space.n_states
        term = self.space.terminal
        if self.transition.shape != (self.n_groups, n, n):
            raise DimensionError(f"transition shape {self.transition.shape}")
        if self.cost.shape != (n, self.n_groups):
            raise DimensionError(f"cost shape {self.cost.shape}")
        if (self.transition < -atol).any():
            raise EstimationError("negative transition probability")
        row_sums = self.transition.sum(axis=2)
        if not np.allclose(row_sums, 1.0, atol=atol):
            raise EstimationError("transition rows must sum to 1")
        if not np.allclose(self.transition[:, term, term], 1.0, atol=atol):
            raise EstimationError("terminal state must absorb")
        if (self.cost < 0).any():
            raise EstimationError("negative cost")
        if (self.cost[term] != 0).any():
            raise EstimationError("terminal cost must be zero")

    def to_dict(self) -> dict:
        return {
            "schema": "carepath.mdp.v1",
            "n_diagnoses": self.space.n_diagnoses,
            "max_inpatient": self.space.max_inpatient,
            "n_groups": self.n_groups,
            "states": self.space.keys(),
            "transition": self.transition.tolist(),
            "cost": self.cost.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EmpiricalMdp":
        space = StateSpace(
            n_diagnoses=int(payload["n_diagnoses"]),
            max_inpatient=int(payload["max_inpatient"]),
        )
        mdp = cls(
            space=space,
            n_groups=int(payload["n_groups"]),
            transition=np.asarray(payload["transition"], dtype=np.float64),
            cost=np.asarray(payload["cost"], dtype=np.float64),
            provenance=dict(payload.get("provenance", {})),
        )
        mdp.validate()
        return mdp


@dataclass
class BlockMdp:
    """Block-level MDP under a partition kernel.

    transition has shape (n_groups, n_blocks_total, n_blocks_total) over the
    non-terminal blocks plus the terminal block (last index); cost has shape
    (n_blocks_total, n_groups). sample_counts records how many samples backed
    each (block, group) row before fallbacks.
    """

    partition: StatePartition
    n_groups: int
    transition: np.ndarray
    cost: np.ndarray
    sample_counts: np.ndarray


def _block_counts(dataset: TransitionDataset, partition: StatePartition, n_groups: int):
    """Per-group block-to-block counts and cost sums."""
    nb = partition.n_blocks_total
    src = partition.labels[dataset.states]
    dst = partition.labels[dataset.next_states]
    counts = np.zeros((n_groups, nb, nb), dtype=np.float64)
    cost_sums = np.zeros((n_groups, nb), dtype=np.float64)
    for a in range(n_groups):
        mask = dataset.actions == a
        flat = src[mask] * nb + dst[mask]
        counts[a] = np.bincount(flat, minlength=nb * nb).reshape(nb, nb)
        cost_sums[a] = np.bincount(src[mask], weights=dataset.costs[mask], minlength=nb)
    return counts, cost_sums


def build_block_mdp(
    dataset: TransitionDataset,
    partition: StatePartition,
    n_groups: int | None = None,
) -> BlockMdp:
    """Estimate the block-level MDP for a partition kernel.

    Each (block, group) row is the conditional frequency of target blocks
    among that block's samples under that group; rows with no samples fall
    back to the group-pooled frequency, then to a zero-cost self-loop. Costs
    are the matching conditional means of claim costs.
    """
    if n_groups is None:
        n_groups = dataset.n_groups
    nb = partition.n_blocks_total
    term = partition.terminal_block
    counts, cost_sums = _block_counts(dataset, partition, n_groups)
    pooled = counts.sum(axis=0)
    pooled_cost = cost_sums.sum(axis=0)

    transition = np.zeros((n_groups, nb, nb))
    cost = np.zeros((nb, n_groups))
    row_counts = counts.sum(axis=2)
    pooled_rows = pooled.sum(axis=1)
    for a in range(n_groups):
        for b in range(nb):
            if b == term:
                continue
            n_ab = row_counts[a, b]
            if n_ab > 0:
                transition[a, b] = counts[a, b] / n_ab
                cost[b, a] = cost_sums[a, b] / n_ab
            elif pooled_rows[b] > 0:
                transition[a, b] = pooled[b] / pooled_rows[b]
                cost[b, a] = pooled_cost[b] / pooled_rows[b]
            else:
                transition[a, b, b] = 1.0
                cost[b, a] = 0.0
        transition[a, term, term] = 1.0
    np.maximum(cost, 0.0, out=cost)
    cost[term] = 0.0
    return BlockMdp(
        partition=partition,
        n_groups=n_groups,
        transition=transition,
        cost=cost,
        sample_counts=row_counts,
    )


def expand_block_mdp(block_mdp: BlockMdp, space: StateSpace) -> EmpiricalMdp:
    """Broadcast block-level rows to member states.

    A block's probability mass on a target block spreads uniformly over that
    block's member states, so same-block states share identical rows exactly.
    """
    partition = block_mdp.partition
    labels = partition.labels
    nb = partition.n_blocks_total
    sizes = np.bincount(labels, minlength=nb).astype(np.float64)
    if (sizes == 0).any():
        # an empty block can appear when k-means strands a centroid; its
        # block-level column carries no mass, so spreading is a no-op
        sizes = np.maximum(sizes, 1.0)
    per_member = block_mdp.transition / sizes[None, None, :]
    transition = per_member[:, labels][:, :, labels]
    cost = block_mdp.cost[labels]
    term = space.terminal
    transition[:, term, :] = 0.0
    transition[:, term, term] = 1.0
    cost[term] = 0.0
    return EmpiricalMdp(
        space=space,
        n_groups=block_mdp.n_groups,
        transition=transition,
        cost=cost,
    )


def _spectral_mdp(dataset: TransitionDataset, spec: KernelSpec, n_groups: int) -> EmpiricalMdp:
    space = dataset.space
    n = space.n_states
    gram = spec.matrix()
    # each observed target spreads one unit of probability over states in
    # proportion to its kernel column; zero-mass targets contribute nothing
    target_mass = gram.sum(axis=0)
    inv_mass = np.zeros(n)
    positive = target_mass > 0
    inv_mass[positive] = 1.0 / target_mass[positive]

    def rows_for(idx: np.ndarray):
        src = gram[:, dataset.states[idx]]
        targets = dataset.next_states[idx]
        spread = gram[:, targets] * inv_mass[targets][None, :]
        numer = src @ spread.T
        mass = src.sum(axis=1)
        cost_num = src @ dataset.costs[idx]
        return numer, mass, cost_num

    def normalized(numer: np.ndarray, mass: np.ndarray):
        """Clamped, renormalized rows plus the mask of rows that carried any
        usable target mass (a row can be empty even when its source mass is
        positive, when every kernel-visible sample targets a zero-mass
        state)."""
        rows = np.zeros_like(numer)
        seen = mass > 0
        rows[seen] = numer[seen] / mass[seen, None]
        np.maximum(rows, 0.0, out=rows)
        sums = rows.sum(axis=1)
        usable = seen & (sums > 0)
        rows[usable] /= sums[usable, None]
        return rows, usable

    transition = np.zeros((n_groups, n, n))
    cost = np.zeros((n, n_groups))
    all_idx = np.arange(dataset.n)
    pooled_cache = None

    for a in range(n_groups):
        idx = all_idx[dataset.actions == a]
        numer, mass, cost_num = rows_for(idx)
        rows, usable = normalized(numer, mass)
        costs_a = np.zeros(n)
        priced = mass > 0
        costs_a[priced] = np.maximum(cost_num[priced] / mass[priced], 0.0)

        if (~usable).any() or (~priced).any():
            if pooled_cache is None:
                p_numer, p_mass, p_cost = rows_for(all_idx)
                p_rows, p_usable = normalized(p_numer, p_mass)
                pooled_cache = (p_rows, p_usable, p_mass, p_cost)
            p_rows, p_usable, p_mass, p_cost = pooled_cache
            take = ~usable & p_usable
            rows[take] = p_rows[take]
            usable |= take
            price = ~priced & (p_mass > 0)
            costs_a[price] = np.maximum(p_cost[price] / p_mass[price], 0.0)

        # last resort: a zero-cost self-loop for states the kernel cannot see
        orphans = np.where(~usable)[0]
        rows[orphans] = 0.0
        rows[orphans, orphans] = 1.0
        costs_a[orphans] = 0.0
        transition[a] = rows
        cost[:, a] = costs_a

    term = space.terminal
    transition[:, term, :] = 0.0
    transition[:, term, term] = 1.0
    cost[term] = 0.0
    return EmpiricalMdp(space=space, n_groups=n_groups, transition=transition, cost=cost)


def build_empirical_mdp(
    dataset: TransitionDataset,
    spec: KernelSpec,
    n_groups: int | None = None,
) -> EmpiricalMdp:
    """Estimate the full MDP from samples under a kernel.

    PARTITION kernels compute each distinct (block, group) row once and
    broadcast it to member states; SPECTRAL kernels smooth over the feature
    inner products. The terminal row absorbs at zero cost in every case.
    """
    if n_groups is None:
        n_groups = dataset.n_groups
    if dataset.n == 0:
        raise EstimationError("empty dataset")
    if spec.variant == KernelVariant.PARTITION:
        block = build_block_mdp(dataset, spec.partition, n_groups)
        mdp = expand_block_mdp(block, dataset.space)
    else:
        mdp = _spectral_mdp(dataset, spec, n_groups)
    mdp.validate()
    return mdp


def estimate_transition_row(
    dataset: TransitionDataset,
    spec: KernelSpec,
    state: int,
    action: int,
) -> np.ndarray:
    """Estimated next-state distribution for one (state, group) pair.

    Reference implementation over explicit sample loops; build_empirical_mdp
    computes the same rows vectorized.
    """
    gram = spec.matrix()
    n = dataset.space.n_states
    if state == dataset.space.terminal:
        row = np.zeros(n)
        row[state] = 1.0
        return row
    target_mass = gram.sum(axis=0)

    def attempt(indices) -> np.ndarray | None:
        weights = np.array([kernel_eval(spec, state, dataset.states[m]) for m in indices])
        if weights.sum() <= 0.0:
            return None
        row = np.zeros(n)
        for w, m in zip(weights, indices):
            if w == 0.0:
                continue
            t = dataset.next_states[m]
            if target_mass[t] > 0:
                row += w * gram[:, t] / target_mass[t]
        row /= weights.sum()
        np.maximum(row, 0.0, out=row)
        if row.sum() <= 0.0:
            return None
        return row / row.sum()

    matching = [m for m in range(dataset.n) if dataset.actions[m] == action]
    row = attempt(matching)
    if row is None:
        row = attempt(range(dataset.n))
    if row is None:
        row = np.zeros(n)
        row[state] = 1.0
    return row


def estimate_cost(
    dataset: TransitionDataset,
    spec: KernelSpec,
    state: int,
    action: int,
) -> float:
    """Kernel-weighted mean claim cost for one (state, group) pair."""
    if state == dataset.space.terminal:
        return 0.0

    def attempt(indices) -> float | None:
        num = 0.0
        den = 0.0
        for m in indices:
            w = kernel_eval(spec, state, dataset.states[m])
            num += w * dataset.costs[m]
            den += w
        if den <= 0.0:
            return None
        return max(num / den, 0.0)

    matching = [m for m in range(dataset.n) if dataset.actions[m] == action]
    value = attempt(matching)
    if value is None:
        value = attempt(range(dataset.n))
    if value is None:
        value = 0.0
    return value

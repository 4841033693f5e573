"""Optimal-policy computation: value iteration and policy extraction.

Episodes end in the absorbing zero-cost terminal state, so the undiscounted
expected total cost is finite for proper models and value iteration converges
without discounting. A discount below 1 is accepted as an escape hatch for
improper models.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .errors import DimensionError, EstimationError, NonConvergenceError
from .ingest import CategoryDictionary, TransitionDataset
from .kernel import EmpiricalMdp
from .spectral import StatePartition


@dataclass
class ValueResult:
    """Optimal expected remaining cost per state, with solve diagnostics."""

    values: np.ndarray
    iterations: int
    residual: float


@dataclass
class GroupPolicy:
    """Deterministic map from state to physician group, plus its Q-table."""

    actions: np.ndarray
    q_values: np.ndarray

    @property
    def n_groups(self) -> int:
        return self.q_values.shape[1]


def _tables(mdp) -> tuple[np.ndarray, np.ndarray]:
    transition = np.asarray(mdp.transition, dtype=np.float64)
    cost = np.asarray(mdp.cost, dtype=np.float64)
    if transition.ndim != 3 or cost.ndim != 2:
        raise DimensionError("expected transition (J,S,S) and cost (S,J)")
    if transition.shape[1] != transition.shape[2] or transition.shape[1] != cost.shape[0]:
        raise DimensionError(
            f"incompatible shapes {transition.shape} and {cost.shape}"
        )
    if transition.shape[0] != cost.shape[1]:
        raise DimensionError("group counts of transition and cost differ")
    return transition, cost


def value_iteration(
    mdp,
    tol: float = 1e-6,
    max_iterations: int = 100_000,
    discount: float = 1.0,
) -> ValueResult:
    """Solve for optimal values by synchronous Bellman sweeps from zero.

    Accepts anything exposing transition (n_groups, n, n) and cost (n,
    n_groups) tables, including block-level models. Raises
    NonConvergenceError when the sup-norm residual stays above tol for
    max_iterations sweeps.
    """
    transition, cost = _tables(mdp)
    if not 0.0 < discount <= 1.0:
        raise DimensionError(f"discount {discount} outside (0, 1]")
    values = np.zeros(transition.shape[1])
    residual = np.inf
    for sweep in range(1, max_iterations + 1):
        q = cost.T + discount * (transition @ values)
        new_values = q.min(axis=0)
        residual = float(np.abs(new_values - values).max())
        values = new_values
        if residual < tol:
            return ValueResult(values=values, iterations=sweep, residual=residual)
    raise NonConvergenceError(residual, max_iterations)


def extract_policy(mdp, values: np.ndarray, discount: float = 1.0) -> GroupPolicy:
    """Greedy policy for a value vector; ties pick the lowest group index."""
    transition, cost = _tables(mdp)
    q = (cost.T + discount * (transition @ values)).T
    return GroupPolicy(actions=q.argmin(axis=1), q_values=q)


def solve(
    mdp,
    tol: float = 1e-6,
    max_iterations: int = 100_000,
    discount: float = 1.0,
) -> tuple[ValueResult, GroupPolicy]:
    """Value iteration plus greedy policy extraction."""
    result = value_iteration(mdp, tol=tol, max_iterations=max_iterations, discount=discount)
    return result, extract_policy(mdp, result.values, discount=discount)


@dataclass
class ReducedSolution:
    """Solution of the block-aggregated MDP expanded back to states."""

    values: ValueResult
    policy: GroupPolicy
    block_values: np.ndarray
    block_policy: np.ndarray


def solve_reduced(
    mdp: EmpiricalMdp,
    partition: StatePartition,
    tol: float = 1e-6,
    max_iterations: int = 100_000,
    discount: float = 1.0,
) -> ReducedSolution:
    """Solve a block-constant MDP in block space and expand the solution.

    Requires exact block constancy: same-block states must share identical
    transition rows and costs (as rows built by a partition kernel do). The
    expanded values match solving the full model to iteration tolerance.
    """
    labels = partition.labels
    nb = partition.n_blocks_total
    transition, cost = _tables(mdp)
    n_groups = transition.shape[0]

    reps = np.zeros(nb, dtype=np.int64)
    for b in range(nb):
        members = np.where(labels == b)[0]
        if len(members) == 0:
            reps[b] = mdp.space.terminal  # empty block: harmless placeholder
            continue
        reps[b] = members[0]
        for s in members[1:]:
            if not (
                np.array_equal(transition[:, s, :], transition[:, members[0], :])
                and np.array_equal(cost[s], cost[members[0]])
            ):
                raise EstimationError(
                    f"states {members[0]} and {s} share block {b} "
                    "but differ in rows or costs"
                )

    # aggregate representative rows by target block
    agg = np.zeros((n_groups, nb, nb))
    for b in range(nb):
        row = transition[:, reps[b], :]
        for b2 in range(nb):
            agg[:, b, b2] = row[:, labels == b2].sum(axis=1)
    block_cost = cost[reps]
    term_block = partition.terminal_block
    agg[:, term_block, :] = 0.0
    agg[:, term_block, term_block] = 1.0
    block_cost[term_block] = 0.0

    block_tables = SimpleNamespace(transition=agg, cost=block_cost)
    result, policy = solve(
        block_tables, tol=tol, max_iterations=max_iterations, discount=discount
    )
    values = ValueResult(
        values=result.values[labels],
        iterations=result.iterations,
        residual=result.residual,
    )
    expanded_policy = GroupPolicy(
        actions=policy.actions[labels],
        q_values=policy.q_values[labels],
    )
    return ReducedSolution(
        values=values,
        policy=expanded_policy,
        block_values=result.values,
        block_policy=policy.actions,
    )


@dataclass
class PrescriptionPolicy:
    """Per-state empirical distributions over procedure codes.

    distributions[s] maps procedure code to probability among claims observed
    at state s under the state's recommended group, falling back to all
    groups at s, then to the global code distribution. sample_counts[s] is
    the number of claims behind the distribution actually used.
    """

    distributions: dict[int, dict[str, float]]
    sample_counts: dict[int, int]


def derive_prescription_policy(
    dataset: TransitionDataset,
    policy: GroupPolicy,
    procedures: CategoryDictionary,
) -> PrescriptionPolicy:
    """Empirical prescription distributions for a group policy.

    For each non-terminal state s, collect procedure codes of claims at s in
    episodes treated by the recommended group policy.actions[s]; states the
    recommended group never treated fall back to all groups, then to the
    pooled global distribution.
    """
    has_code = dataset.procedures >= 0
    n_states = dataset.space.n_states

    def distribution(mask: np.ndarray) -> tuple[dict[str, float], int] | None:
        codes = dataset.procedures[mask]
        if len(codes) == 0:
            return None
        counts = np.bincount(codes, minlength=len(procedures))
        total = counts.sum()
        return (
            {
                procedures.labels[c]: counts[c] / total
                for c in np.nonzero(counts)[0]
            },
            int(total),
        )

    global_dist = distribution(has_code)
    distributions: dict[int, dict[str, float]] = {}
    sample_counts: dict[int, int] = {}
    for s in range(n_states - 1):
        at_state = has_code & (dataset.states == s)
        picked = distribution(at_state & (dataset.actions == policy.actions[s]))
        if picked is None:
            picked = distribution(at_state)
        if picked is None:
            picked = global_dist
        if picked is None:
            picked = ({}, 0)
        distributions[s], sample_counts[s] = picked
    return PrescriptionPolicy(distributions=distributions, sample_counts=sample_counts)

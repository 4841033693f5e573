"""Synthetic claims generator with a fully known ground-truth model.

Episodes progress through a small number of latent phases. Within a phase,
every claim draws its diagnosis category uniformly from a phase-specific pool
(pools are disjoint across phases), its cost from a gamma distribution whose
mean depends on the phase and the treating physician's group, and its
inpatient flag from a phase-specific rate. Group skill enters twice: a
per-(phase, group) cost multiplier, and a per-(phase, group) tilt on the
probability of staying in the phase, so the best group in a phase is both
cheaper per claim and quicker to move the patient on.

Because the phase chain always passes through phases in order, the expected
episode cost under a phase-constant group choice separates per phase as
base_cost x multiplier / (1 - stay); the optimal policy, the exact MDP, the
true partition, and calibration targets are therefore all closed-form.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import jsonify, write_json
from .errors import (
    CalibrationError,
    DimensionError,
    ImproperPolicyError,
    IntegrityError,
)
from .ingest import (
    FLAG_COLUMN,
    NA_LITERAL,
    REQUIRED_COLUMNS,
    CategoryDictionary,
    ClaimRecord,
    EpisodeRecord,
    PhysicianGrouping,
    TransitionDataset,
    grouping_from_assignment,
)
from .kernel import EmpiricalMdp
from .states import StateSpace

CALIBRATION_MIN_EPISODES = 10_000

GROUND_TRUTH_SCHEMA = "carepath.groundtruth.v1"


@dataclass(frozen=True)
class GroundTruthModel:
    """Data-generating process with closed-form expectations.

    stay[b] is the base probability of staying in phase b per claim;
    stay_tilts[b][j] shifts it for group-j physicians. The complement
    advances to phase b+1 (the last phase exits to TERMINAL).
    group_multipliers[b][j] scales base_costs[b] for group-j claims.
    Claims per episode are capped at max_claims. overlap_prob lets a claim
    draw its diagnosis from the union of all pools instead of its phase's,
    blurring the otherwise disjoint emissions.
    """

    stay: tuple[float, ...]
    base_costs: tuple[float, ...]
    group_multipliers: tuple[tuple[float, ...], ...]
    stay_tilts: tuple[tuple[float, ...], ...]
    cost_cv: float
    category_blocks: tuple[tuple[str, ...], ...]
    procedure_blocks: tuple[tuple[str, ...], ...]
    inpatient_probs: tuple[float, ...]
    mean_gap_days: float = 2.5
    max_claims: int = 56
    reported_claims_range: tuple[int, int] = (8, 56)
    overlap_prob: float = 0.0
    na_diagnosis_prob: float = 0.0
    na_procedure_prob: float = 0.05
    target_mean_cost: float = 19559.0
    calibration_tolerance: float = 0.10

    @property
    def n_blocks(self) -> int:
        return len(self.stay)

    @property
    def n_groups(self) -> int:
        return len(self.group_multipliers[0])

    def validate(self) -> None:
        k = self.n_blocks
        lengths = (
            len(self.base_costs),
            len(self.group_multipliers),
            len(self.stay_tilts),
            len(self.category_blocks),
            len(self.procedure_blocks),
            len(self.inpatient_probs),
        )
        if set(lengths) != {k}:
            raise DimensionError(f"per-phase fields disagree on count: {lengths}")
        seen: set[str] = set()
        for pool in self.category_blocks:
            if seen & set(pool):
                raise IntegrityError("category pools must be disjoint")
            seen |= set(pool)
        stays = self.stay_matrix()
        if not ((stays > 0.0) & (stays < 1.0)).all():
            raise DimensionError("tilted stay probabilities must lie in (0, 1)")
        if not 0.0 <= self.overlap_prob <= 1.0:
            raise DimensionError("overlap_prob must lie in [0, 1]")

    def stay_matrix(self) -> np.ndarray:
        """Effective stay probability per (phase, group), shape (k, J)."""
        return np.asarray(self.stay)[:, None] + np.asarray(self.stay_tilts)

    def block_transition(self, group: int) -> np.ndarray:
        """Phase transition matrix for one group, shape (k, k+1)."""
        k = self.n_blocks
        stays = self.stay_matrix()[:, group]
        out = np.zeros((k, k + 1))
        for b in range(k):
            out[b, b] = stays[b]
            out[b, b + 1] = 1.0 - stays[b]
        return out

    def categories(self) -> list[str]:
        return sorted(label for pool in self.category_blocks for label in pool)

    def block_of_category(self) -> dict[str, int]:
        return {
            label: b
            for b, pool in enumerate(self.category_blocks)
            for label in pool
        }

    def expected_visits(self, group_by_block: tuple[int, ...]) -> np.ndarray:
        """Expected claims per phase (uncapped) under a phase-wise group choice.

        The chain visits every phase exactly once as a run whose length is
        geometric in the effective stay probability.
        """
        stays = self.stay_matrix()
        chosen = stays[np.arange(self.n_blocks), list(group_by_block)]
        return 1.0 / (1.0 - chosen)

    def expected_cost(self, group_by_block: tuple[int, ...] | None = None) -> float:
        """Uncapped expected episode cost.

        None means the behavior policy: each episode is billed throughout by
        one group drawn uniformly.
        """
        multipliers = np.asarray(self.group_multipliers)
        base = np.asarray(self.base_costs)
        if group_by_block is None:
            total = 0.0
            for j in range(self.n_groups):
                constant = (j,) * self.n_blocks
                total += float(
                    (self.expected_visits(constant) * base * multipliers[:, j]).sum()
                )
            return total / self.n_groups
        per_block = multipliers[np.arange(self.n_blocks), list(group_by_block)]
        return float(
            (self.expected_visits(tuple(group_by_block)) * base * per_block).sum()
        )

    def optimal_groups(self) -> tuple[int, ...]:
        """The cost-minimizing group per phase (per-phase separable)."""
        multipliers = np.asarray(self.group_multipliers)
        stays = self.stay_matrix()
        objective = multipliers / (1.0 - stays)
        return tuple(int(g) for g in objective.argmin(axis=1))


def default_model() -> GroundTruthModel:
    """The calibrated three-phase model behind the synthetic dataset.

    Phase means and hazards are tuned so the mean episode cost lands near
    $19,559 with episodes capped at 56 claims. Multipliers and stay tilts
    rotate together, giving each phase a different group that is both
    fifteen percent cheaper per claim and quicker to discharge the phase,
    so a policy only beats the billing average by matching groups to phases.
    """
    spread = (0.85, 1.00, 1.15)
    tilt = (-0.02, 0.0, 0.02)
    multipliers = tuple(
        tuple(spread[(j - b) % 3] for j in range(3)) for b in range(3)
    )
    tilts = tuple(tuple(tilt[(j - b) % 3] for j in range(3)) for b in range(3))
    sizes = (45, 46, 46)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    categories = tuple(
        tuple(f"dx{offsets[b] + i:03d}" for i in range(sizes[b])) for b in range(3)
    )
    procedures = tuple(
        tuple(f"px{10 * b + i:03d}" for i in range(10)) for b in range(3)
    )
    return GroundTruthModel(
        stay=(0.88, 0.88, 0.92),
        base_costs=(352.0, 1056.0, 605.0),
        group_multipliers=multipliers,
        stay_tilts=tilts,
        cost_cv=0.6,
        category_blocks=categories,
        procedure_blocks=procedures,
        inpatient_probs=(0.05, 0.50, 0.08),
    )


@dataclass(frozen=True)
class SynthConfig:
    """Size and seeding of a generated claims dataset."""

    n_episodes: int = 212
    n_physicians: int = 37
    n_beneficiaries: int = 205
    seed: int = 0
    start_day_range: tuple[int, int] = (0, 730)


def _physician_groups(n_physicians: int, n_groups: int) -> dict[str, int]:
    return {f"phy{p:03d}": p % n_groups for p in range(n_physicians)}


def _assign(rng: np.random.Generator, n_items: int, n_owners: int) -> np.ndarray:
    """Owner index per item; every owner gets at least one item when possible."""
    owners = np.arange(n_items) % n_owners
    if n_items > n_owners:
        owners[n_owners:] = rng.integers(n_owners, size=n_items - n_owners)
    return rng.permutation(owners)


def generate_episodes(
    model: GroundTruthModel, config: SynthConfig
) -> tuple[list[EpisodeRecord], dict]:
    """Draw episodes from the model; returns them with a ground-truth record.

    Deterministic given config.seed. When at least 10,000 episodes are drawn,
    the realized mean episode cost must land within the model's calibration
    tolerance of its target, else CalibrationError.
    """
    model.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    groups = _physician_groups(config.n_physicians, model.n_groups)
    physician_ids = sorted(groups)
    episode_physicians = _assign(rng, config.n_episodes, config.n_physicians)
    episode_beneficiaries = _assign(rng, config.n_episodes, config.n_beneficiaries)

    shape = 1.0 / model.cost_cv**2
    stays = model.stay_matrix()
    multipliers = np.asarray(model.group_multipliers)
    base = np.asarray(model.base_costs)
    all_categories = model.categories()

    episodes: list[EpisodeRecord] = []
    for e in range(config.n_episodes):
        episode_id = f"ep{e:06d}"
        physician = physician_ids[episode_physicians[e]]
        group = groups[physician]
        beneficiary = f"bene{episode_beneficiaries[e]:05d}"
        day = int(rng.integers(*config.start_day_range))
        block = 0
        claims: list[ClaimRecord] = []
        for t in range(model.max_claims):
            if rng.random() < model.na_diagnosis_prob:
                category = code = None
            else:
                if model.overlap_prob > 0.0 and rng.random() < model.overlap_prob:
                    pool = all_categories
                else:
                    pool = model.category_blocks[block]
                category = pool[rng.integers(len(pool))]
                code = f"{category}-{rng.integers(10)}"
            if rng.random() < model.na_procedure_prob:
                procedure = procedure_code = None
            else:
                pool = model.procedure_blocks[block]
                procedure = pool[rng.integers(len(pool))]
                procedure_code = f"{procedure}-{rng.integers(2)}"
            mean = base[block] * multipliers[block, group]
            cost = round(float(rng.gamma(shape, mean / shape)), 2)
            inpatient = bool(rng.random() < model.inpatient_probs[block])
            end_day = day + (int(rng.integers(1, 6)) if inpatient else 0)
            claims.append(
                ClaimRecord(
                    claim_id=f"{episode_id}-c{t:03d}",
                    start_day=day,
                    end_day=end_day,
                    cost=cost,
                    procedure_code=procedure_code,
                    procedure_category=procedure,
                    diagnosis_code=code,
                    diagnosis_category=category,
                    inpatient=inpatient,
                )
            )
            day += 1 + int(rng.poisson(model.mean_gap_days))
            if rng.random() >= stays[block, group]:
                block += 1
                if block == model.n_blocks:
                    break
        episodes.append(
            EpisodeRecord(
                episode_id=episode_id,
                beneficiary_id=beneficiary,
                physician_id=physician,
                start_day=claims[0].start_day,
                end_day=max(c.end_day for c in claims),
                total_cost=round(sum(c.cost for c in claims), 2),
                claims=tuple(claims),
            )
        )

    mean_cost = float(np.mean([ep.total_cost for ep in episodes]))
    mean_claims = float(np.mean([ep.n_claims for ep in episodes]))
    if config.n_episodes >= CALIBRATION_MIN_EPISODES:
        drift = abs(mean_cost - model.target_mean_cost) / model.target_mean_cost
        if drift > model.calibration_tolerance:
            raise CalibrationError(
                f"mean episode cost {mean_cost:.0f} off target "
                f"{model.target_mean_cost:.0f} by {drift:.1%}"
            )

    truth = {
        "schema": GROUND_TRUTH_SCHEMA,
        "seed": config.seed,
        "n_episodes": config.n_episodes,
        "n_physicians": config.n_physicians,
        "n_beneficiaries": config.n_beneficiaries,
        "n_blocks": model.n_blocks,
        "n_groups": model.n_groups,
        "physician_groups": groups,
        "category_blocks": model.block_of_category(),
        "stay": list(model.stay),
        "stay_tilts": [list(row) for row in model.stay_tilts],
        "base_costs": list(model.base_costs),
        "group_multipliers": [list(row) for row in model.group_multipliers],
        "inpatient_probs": list(model.inpatient_probs),
        "cost_cv": model.cost_cv,
        "optimal_groups": list(model.optimal_groups()),
        "analytic_behavior_cost_uncapped": model.expected_cost(None),
        "analytic_optimal_cost_uncapped": model.expected_cost(model.optimal_groups()),
        "target_mean_cost": model.target_mean_cost,
        "empirical_mean_cost": mean_cost,
        "empirical_mean_claims": mean_claims,
        "claims_range": [
            min(ep.n_claims for ep in episodes),
            max(ep.n_claims for ep in episodes),
        ],
    }
    return episodes, jsonify(truth)


def _format_value(value) -> str:
    if value is None:
        return NA_LITERAL
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def generate_claims(
    model: GroundTruthModel,
    config: SynthConfig,
    csv_path: str | Path,
    sidecar_path: str | Path | None = None,
) -> dict:
    """Write a claims CSV plus a ground-truth JSON sidecar; returns the truth.

    The sidecar defaults to the CSV path with a .ground_truth.json suffix.
    Output is deterministic given the config.
    """
    episodes, truth = generate_episodes(model, config)
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    columns = REQUIRED_COLUMNS + (FLAG_COLUMN,)
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for ep in episodes:
            for claim in ep.claims:
                writer.writerow(
                    [
                        ep.episode_id,
                        ep.beneficiary_id,
                        _format_value(ep.start_day),
                        _format_value(ep.end_day),
                        _format_value(ep.total_cost),
                        ep.physician_id,
                        claim.claim_id,
                        _format_value(claim.start_day),
                        _format_value(claim.end_day),
                        _format_value(claim.cost),
                        _format_value(claim.procedure_code),
                        _format_value(claim.procedure_category),
                        _format_value(claim.diagnosis_code),
                        _format_value(claim.diagnosis_category),
                        "1" if claim.inpatient else "0",
                    ]
                )
    if sidecar_path is None:
        sidecar_path = csv_path.with_suffix(".ground_truth.json")
    write_json(sidecar_path, truth)
    return truth


def ground_truth_grouping(truth: dict, episodes: list[EpisodeRecord]) -> PhysicianGrouping:
    """The generator's physician groups as a PhysicianGrouping."""
    assignment = {p: int(g) for p, g in truth["physician_groups"].items()}
    return grouping_from_assignment(episodes, assignment, int(truth["n_groups"]))


def model_dictionary(model: GroundTruthModel) -> CategoryDictionary:
    """Diagnosis dictionary covering every category the model can emit."""
    return CategoryDictionary.from_observed(model.categories())


def generate_transition_samples(
    model: GroundTruthModel,
    n_episodes: int,
    seed: int = 0,
    max_inpatient: int = 0,
) -> tuple[TransitionDataset, CategoryDictionary, StateSpace]:
    """Bulk path: draw transition samples without materializing claims.

    Episodes are simulated in lockstep with vectorized draws, so sample
    counts in the hundreds of thousands stay cheap. Diagnoses are always
    labeled (no missing values on this path) and the dictionary covers the
    full category set, so state indices are independent of the draw. Episode
    e is billed by group e mod n_groups.
    """
    model.validate()
    diagnoses = model_dictionary(model)
    space = StateSpace(n_diagnoses=len(diagnoses), max_inpatient=max_inpatient)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    k = model.n_blocks
    sizes = np.asarray([len(pool) for pool in model.category_blocks])
    offsets = np.asarray(
        [diagnoses.index_of(pool[0]) for pool in model.category_blocks]
    )
    for b, pool in enumerate(model.category_blocks):
        indices = [diagnoses.index_of(label) for label in pool]
        if indices != list(range(offsets[b], offsets[b] + sizes[b])):
            raise IntegrityError("category pools must be contiguous when sorted")
    base = np.asarray(model.base_costs)
    multipliers = np.asarray(model.group_multipliers)
    inpatient_probs = np.asarray(model.inpatient_probs)
    stays = model.stay_matrix()
    shape = 1.0 / model.cost_cv**2

    groups = np.arange(n_episodes, dtype=np.int64) % model.n_groups
    blocks = np.zeros(n_episodes, dtype=np.int64)
    counts = np.zeros(n_episodes, dtype=np.int64)

    def emit(idx, blk):
        diag = offsets[blk] + rng.integers(sizes[blk])
        if model.overlap_prob > 0.0:
            blurred = rng.random(len(idx)) < model.overlap_prob
            diag[blurred] = rng.integers(sizes.sum(), size=int(blurred.sum()))
        inpatient = rng.random(len(idx)) < inpatient_probs[blk]
        counts[idx] = np.minimum(counts[idx] + inpatient, max_inpatient)
        mean = base[blk] * multipliers[blk, groups[idx]]
        cost = rng.gamma(shape, mean / shape)
        return diag * (max_inpatient + 1) + counts[idx], cost

    states_parts, actions_parts, costs_parts = [], [], []
    next_parts, episode_parts, position_parts = [], [], []

    active = np.arange(n_episodes, dtype=np.int64)
    state, cost = emit(active, blocks[active])
    for t in range(model.max_claims):
        draws = rng.random(len(active))
        nxt_blocks = blocks[active] + (
            draws >= stays[blocks[active], groups[active]]
        )
        ended = (nxt_blocks == k) | (t + 1 == model.max_claims)
        ongoing = ~ended

        next_state = np.full(len(active), space.terminal, dtype=np.int64)
        idx_on = active[ongoing]
        if len(idx_on):
            blocks[idx_on] = nxt_blocks[ongoing]
            next_state[ongoing], next_cost = emit(idx_on, blocks[idx_on])

        states_parts.append(state)
        actions_parts.append(groups[active])
        costs_parts.append(cost)
        next_parts.append(next_state)
        episode_parts.append(active)
        position_parts.append(np.full(len(active), t, dtype=np.int64))

        if not len(idx_on):
            break
        active = idx_on
        state = next_state[ongoing]
        cost = next_cost

    states = np.concatenate(states_parts)
    dataset = TransitionDataset(
        space=space,
        n_groups=model.n_groups,
        states=states,
        actions=np.concatenate(actions_parts),
        costs=np.concatenate(costs_parts),
        next_states=np.concatenate(next_parts),
        episode_index=np.concatenate(episode_parts),
        positions=np.concatenate(position_parts),
        procedures=np.full(len(states), -1, dtype=np.int64),
        episode_ids=[f"ep{e:06d}" for e in range(n_episodes)],
    )
    return dataset, diagnoses, space


def oracle_partition(
    model: GroundTruthModel, space: StateSpace, diagnoses: CategoryDictionary
) -> np.ndarray:
    """True phase label per state; TERMINAL gets its own label n_blocks.

    Dictionary labels outside the model's pools (including the reserved
    unknown label) map to phase 0, whose dynamics unlabeled early claims
    follow. Ambiguous pools (a category in several phases) are rejected.
    """
    model.validate()
    block_of = model.block_of_category()
    labels = np.zeros(space.n_states, dtype=np.int64)
    for d, label in enumerate(diagnoses.labels):
        block = block_of.get(label, 0)
        for c in range(space.max_inpatient + 1):
            labels[space.index(d, c)] = block
    labels[space.terminal] = model.n_blocks
    return labels


def true_mdp(
    model: GroundTruthModel,
    space: StateSpace,
    diagnoses: CategoryDictionary,
) -> EmpiricalMdp:
    """The exact state-level MDP induced by the model on a state space.

    Transitions factor through phases: a state in phase b moves on with the
    group's phase probabilities and then lands uniformly on one of the
    destination phase's categories, with the inpatient count advancing at
    the destination phase's inpatient rate. Costs depend only on
    (phase, group). States whose category the model cannot emit follow
    phase-0 dynamics. Emission overlap is not represented; the exact MDP
    exists only for disjoint emissions.
    """
    model.validate()
    if model.overlap_prob > 0.0:
        raise DimensionError("exact MDP undefined with emission overlap")
    k = model.n_blocks
    n_groups = model.n_groups
    n = space.n_states
    cap = space.max_inpatient
    block_of = model.block_of_category()
    state_block = oracle_partition(model, space, diagnoses)
    member_diagnoses = [
        [d for d, label in enumerate(diagnoses.labels) if block_of.get(label) == b]
        for b in range(k)
    ]
    sizes = np.asarray([len(members) for members in member_diagnoses])
    if (sizes == 0).any():
        raise DimensionError("dictionary misses every category of some phase")
    inpatient_probs = np.asarray(model.inpatient_probs)
    multipliers = np.asarray(model.group_multipliers)
    base = np.asarray(model.base_costs)

    transition = np.zeros((n_groups, n, n))
    cost = np.zeros((n, n_groups))
    for j in range(n_groups):
        blocks_matrix = model.block_transition(j)
        for s in range(n):
            if s == space.terminal:
                transition[j, s, s] = 1.0
                continue
            b = state_block[s]
            _, c = space.decode(s)
            cost[s, j] = base[b] * multipliers[b, j]
            for b2 in range(k):
                mass = blocks_matrix[b, b2] / sizes[b2]
                if mass == 0.0:
                    continue
                p_in = inpatient_probs[b2]
                up = min(c + 1, cap)
                for d2 in member_diagnoses[b2]:
                    if up == c:
                        transition[j, s, space.index(d2, c)] += mass
                    else:
                        transition[j, s, space.index(d2, up)] += mass * p_in
                        transition[j, s, space.index(d2, c)] += mass * (1 - p_in)
            transition[j, s, space.terminal] = blocks_matrix[b, k]
    mdp = EmpiricalMdp(
        space=space,
        n_groups=n_groups,
        transition=transition,
        cost=cost,
        provenance={"kind": "ground-truth"},
    )
    mdp.validate()
    return mdp


def pooled_state_matrix(
    model: GroundTruthModel,
    space: StateSpace,
    diagnoses: CategoryDictionary,
) -> np.ndarray:
    """State transition matrix induced by pooling groups as generated.

    Episodes are billed by one uniformly drawn group throughout, so samples
    from a phase mix groups in proportion to each group's expected visits
    there. Rows are exactly phase-constant.
    """
    mdp = true_mdp(model, space, diagnoses)
    k = model.n_blocks
    visits = np.stack(
        [model.expected_visits((j,) * k) for j in range(model.n_groups)], axis=1
    )
    weights = visits / visits.sum(axis=1, keepdims=True)
    state_block = oracle_partition(model, space, diagnoses)
    pooled = np.zeros((space.n_states, space.n_states))
    for s in range(space.n_states):
        if s == space.terminal:
            pooled[s, s] = 1.0
            continue
        pooled[s] = weights[state_block[s]] @ mdp.transition[:, s, :]
    return pooled


def random_proper_mdp(
    n_states: int,
    n_groups: int,
    rng: np.random.Generator,
    terminal_mass: float = 0.05,
    cost_scale: float = 100.0,
) -> EmpiricalMdp:
    """A random MDP whose every policy reaches TERMINAL almost surely.

    Each non-terminal row mixes a Dirichlet draw with a guaranteed minimum
    mass on the terminal state, so undiscounted value iteration converges
    for any policy.
    """
    if n_states < 2:
        raise DimensionError("need at least one non-terminal state")
    space = StateSpace(n_diagnoses=n_states - 1, max_inpatient=0)
    terminal = space.terminal
    transition = np.zeros((n_groups, n_states, n_states))
    for a in range(n_groups):
        for s in range(n_states - 1):
            row = rng.dirichlet(np.ones(n_states))
            row = (1 - terminal_mass) * row
            row[terminal] += terminal_mass
            transition[a, s] = row
    transition[:, terminal, terminal] = 1.0
    cost = rng.uniform(0.0, cost_scale, size=(n_states, n_groups))
    cost[terminal] = 0.0
    mdp = EmpiricalMdp(
        space=space,
        n_groups=n_groups,
        transition=transition,
        cost=cost,
        provenance={"kind": "random-proper"},
    )
    mdp.validate()
    return mdp


def oracle_value(mdp, radius_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and a greedy policy by exhaustive policy enumeration.

    Solves each stationary deterministic policy's linear cost system exactly
    and takes the componentwise minimum; policies that do not reach TERMINAL
    (transient spectral radius at or above one) are skipped. Intended for
    small instances only. Raises ImproperPolicyError when no policy is
    proper.
    """
    transition = np.asarray(mdp.transition, dtype=np.float64)
    cost = np.asarray(mdp.cost, dtype=np.float64)
    n_groups, n, _ = transition.shape
    m = n - 1
    if n_groups**m > 300_000:
        raise DimensionError(f"{n_groups}**{m} policies is too many to enumerate")

    identity = np.eye(m)
    best = np.full(n, np.inf)
    best[n - 1] = 0.0
    found = False
    for assignment in itertools.product(range(n_groups), repeat=m):
        rows = transition[list(assignment), np.arange(m)]
        q = rows[:, :m]
        if np.max(np.abs(np.linalg.eigvals(q))) >= 1.0 - radius_tol:
            continue
        values = np.linalg.solve(identity - q, cost[np.arange(m), list(assignment)])
        found = True
        best[:m] = np.minimum(best[:m], values)
    if not found:
        raise ImproperPolicyError([], "no stationary policy reaches the terminal state")

    q_values = cost.T + transition @ best
    policy = np.argmin(q_values, axis=0)
    policy[n - 1] = 0
    return best, policy

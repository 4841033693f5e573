"""Policy evaluation by simulation: rollouts, cross-validation, forecasting.

Costs are evaluated by rolling episodes out of an estimated model: a batch of
rollouts yields one batch-mean cost, repeated batches yield a grand mean with
a 95% confidence interval over batch means. Cross-validation re-fits the full
pipeline on random episode-level halves and scores each candidate block count
on a plain empirical model of the held-out half. Forecasting turns rollouts
with day stamps into per-day diagnosis-category occupancy distributions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BalanceError,
    DimensionError,
    EmptySupportError,
    FoldError,
)
from .ingest import (
    CategoryDictionary,
    EpisodeRecord,
    PhysicianGrouping,
    TransitionDataset,
    episode_states,
    extract_transitions,
    group_physicians,
    initial_state_distribution,
)
from .kernel import KernelSpec, KernelVariant, build_block_mdp, build_empirical_mdp
from .solver import value_iteration, extract_policy
from .spectral import (
    ZeroRowRule,
    cluster_states,
    count_frequencies,
    normalize_rows,
    singleton_partition,
    top_right_singular_vectors,
)
from .states import StateSpace

logger = logging.getLogger(__name__)

PREMIUM_THRESHOLD = 25565.0


def episode_premium(cost: float, threshold: float = PREMIUM_THRESHOLD) -> float:
    """Premium paid on an episode: the cost overshoot above the threshold."""
    return max(0.0, cost - threshold)


@dataclass
class GapModel:
    """Distribution of day gaps between consecutive claims.

    Samples uniformly from the observed gaps; an empty observation set falls
    back to a constant default gap.
    """

    gaps: np.ndarray
    default_gap: int = 1

    @classmethod
    def from_episodes(cls, episodes: list[EpisodeRecord]) -> "GapModel":
        observed = []
        for ep in episodes:
            days = [c.start_day for c in ep.claims]
            observed.extend(max(b - a, 0) for a, b in zip(days, days[1:]))
        return cls(gaps=np.asarray(sorted(observed), dtype=np.int64))

    @classmethod
    def constant(cls, gap: int) -> "GapModel":
        return cls(gaps=np.asarray([gap], dtype=np.int64))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if len(self.gaps) == 0:
            return (
                self.default_gap
                if size is None
                else np.full(size, self.default_gap, dtype=np.int64)
            )
        if size is None:
            return int(self.gaps[rng.integers(len(self.gaps))])
        return self.gaps[rng.integers(len(self.gaps), size=size)]


@dataclass
class RolloutConfig:
    """Protocol knobs for simulation-based evaluation.

    start_distribution is a probability vector over the model's states;
    evaluate_policy requires it (build one from a dataset with
    initial_state_distribution).
    """

    seed: int = 0
    repeats: int = 500
    rollouts: int = 400
    max_steps: int = 200
    premium_threshold: float = PREMIUM_THRESHOLD
    start_distribution: np.ndarray | None = None
    truncation_warn_rate: float = 0.01


@dataclass
class EpisodeStats:
    """Simulated episode-cost statistics with batch-mean confidence bounds."""

    mean_cost: float
    cost_std: float
    ci95_cost: float
    mean_premium: float
    ci95_premium: float
    episodes_simulated: int
    truncated: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_cost": self.mean_cost,
            "cost_std": self.cost_std,
            "ci95_cost": self.ci95_cost,
            "mean_premium": self.mean_premium,
            "ci95_premium": self.ci95_premium,
            "episodes_simulated": self.episodes_simulated,
            "truncated": self.truncated,
            "warnings": list(self.warnings),
        }


@dataclass
class Trajectory:
    """A single simulated episode with day stamps."""

    states: list[int]
    days: list[int]
    costs: list[float]
    total_cost: float
    terminal_day: int | None
    truncated: bool


def _transition_cdf(transition: np.ndarray) -> np.ndarray:
    return np.cumsum(transition, axis=2)


def simulate_episode(
    mdp,
    policy: np.ndarray | None,
    start_state: int,
    gap_model: GapModel,
    rng: np.random.Generator,
    max_steps: int = 200,
    start_day: int = 0,
) -> Trajectory:
    """Roll a single episode with day stamps until absorption or max_steps.

    policy gives the group per state; None picks a group uniformly at random
    at every step. Costs accrue from the model's cost table; day stamps start
    at start_day and advance by sampled gaps. Starting at TERMINAL yields an
    empty trajectory.
    """
    n = mdp.transition.shape[1]
    terminal = n - 1
    n_groups = mdp.transition.shape[0]
    if start_state == terminal:
        return Trajectory([], [], [], 0.0, start_day, False)

    cdf = _transition_cdf(mdp.transition)
    states, days, costs = [], [], []
    state = start_state
    day = start_day
    total = 0.0
    for _ in range(max_steps):
        action = int(policy[state]) if policy is not None else int(rng.integers(n_groups))
        step_cost = float(mdp.cost[state, action])
        states.append(state)
        days.append(day)
        costs.append(step_cost)
        total += step_cost
        u = rng.random()
        state = int(np.searchsorted(cdf[action, state], u, side="right"))
        state = min(state, terminal)
        day += int(gap_model.sample(rng))
        if state == terminal:
            return Trajectory(states, days, costs, total, day, False)
    return Trajectory(states, days, costs, total, None, True)


def _simulate_batch(
    cdf: np.ndarray,
    cost: np.ndarray,
    policy: np.ndarray | None,
    start_distribution: np.ndarray,
    rollouts: int,
    max_steps: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Vectorized batch of rollouts; returns per-episode costs and the number
    of episodes still unfinished at max_steps."""
    n_groups, n, _ = cdf.shape
    terminal = n - 1
    states = rng.choice(n, size=rollouts, p=start_distribution)
    totals = np.zeros(rollouts)
    active = states != terminal
    for _ in range(max_steps):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        current = states[idx]
        if policy is not None:
            actions = policy[current]
        else:
            actions = rng.integers(n_groups, size=len(idx))
        totals[idx] += cost[current, actions]
        draws = rng.random(len(idx))
        nxt = (cdf[actions, current] < draws[:, None]).sum(axis=1)
        np.clip(nxt, 0, terminal, out=nxt)
        states[idx] = nxt
        active[idx] = nxt != terminal
    return totals, int(active.sum())


def _stats_from_batches(
    batch_cost_means: list[float],
    batch_premium_means: list[float],
    cost_sum: float,
    cost_sumsq: float,
    n_episodes: int,
    truncated: int,
    warn_rate: float,
) -> EpisodeStats:
    repeats = len(batch_cost_means)
    mean_cost = float(np.mean(batch_cost_means))
    mean_premium = float(np.mean(batch_premium_means))
    if repeats >= 2:
        ci_cost = 1.96 * float(np.std(batch_cost_means, ddof=1)) / np.sqrt(repeats)
        ci_premium = 1.96 * float(np.std(batch_premium_means, ddof=1)) / np.sqrt(repeats)
    else:
        ci_cost = ci_premium = 0.0
    if n_episodes >= 2:
        variance = max(cost_sumsq - cost_sum**2 / n_episodes, 0.0) / (n_episodes - 1)
        cost_std = float(np.sqrt(variance))
    else:
        cost_std = 0.0
    warnings = []
    if n_episodes > 0 and truncated / n_episodes > warn_rate:
        warnings.append(
            f"{truncated} of {n_episodes} rollouts hit the step limit; "
            "costs are truncated below their true values"
        )
    return EpisodeStats(
        mean_cost=mean_cost,
        cost_std=cost_std,
        ci95_cost=ci_cost,
        mean_premium=mean_premium,
        ci95_premium=ci_premium,
        episodes_simulated=n_episodes,
        truncated=truncated,
        warnings=warnings,
    )


def evaluate_policy(mdp, policy: np.ndarray | None, config: RolloutConfig) -> EpisodeStats:
    """Simulate a policy for repeats x rollouts episodes and summarize.

    Runs config.repeats independent batches of config.rollouts episodes;
    batch b uses a generator seeded by (config.seed, b), so results do not
    depend on scheduling. The 95% confidence intervals are 1.96 times the
    standard error of the batch means.
    """
    if config.start_distribution is None:
        raise DimensionError("config.start_distribution is required")
    start = np.asarray(config.start_distribution, dtype=np.float64)
    n = mdp.transition.shape[1]
    if start.shape != (n,):
        raise DimensionError(f"start distribution shape {start.shape} != ({n},)")
    cdf = _transition_cdf(mdp.transition)
    cost = np.asarray(mdp.cost)

    batch_cost_means: list[float] = []
    batch_premium_means: list[float] = []
    cost_sum = 0.0
    cost_sumsq = 0.0
    episodes = 0
    truncated = 0
    for b in range(config.repeats):
        rng = np.random.default_rng([config.seed, b])
        totals, batch_truncated = _simulate_batch(
            cdf, cost, policy, start, config.rollouts, config.max_steps, rng
        )
        premiums = np.maximum(totals - config.premium_threshold, 0.0)
        batch_cost_means.append(float(totals.mean()))
        batch_premium_means.append(float(premiums.mean()))
        cost_sum += float(totals.sum())
        cost_sumsq += float((totals**2).sum())
        episodes += len(totals)
        truncated += batch_truncated
    stats = _stats_from_batches(
        batch_cost_means,
        batch_premium_means,
        cost_sum,
        cost_sumsq,
        episodes,
        truncated,
        config.truncation_warn_rate,
    )
    for message in stats.warnings:
        logger.warning("%s", message)
    return stats


@dataclass
class CvConfig:
    """Cross-validation protocol: pipeline knobs plus rollout counts."""

    seed: int = 0
    repeats: int = 500
    rollouts: int = 400
    max_steps: int = 200
    premium_threshold: float = PREMIUM_THRESHOLD
    restarts: int = 100
    zero_row_rule: ZeroRowRule = ZeroRowRule.SELF_LOOP
    balance_tolerance: float = 500.0
    balance_max_attempts: int = 2000
    vi_tol: float = 1e-6
    vi_max_iterations: int = 100_000
    discount: float = 1.0
    max_fold_retries: int = 5
    truncation_warn_rate: float = 0.01


@dataclass
class CvReport:
    """Per-k in-sample and out-of-sample statistics across repeats."""

    k_values: list[int]
    in_sample: dict[int, EpisodeStats]
    out_of_sample: dict[int, EpisodeStats]
    selected_k: int
    repeats: int
    skipped_episodes: int
    fold_retries: int

    def to_dict(self) -> dict:
        return {
            "k_values": list(self.k_values),
            "in_sample": {str(k): v.to_dict() for k, v in self.in_sample.items()},
            "out_of_sample": {
                str(k): v.to_dict() for k, v in self.out_of_sample.items()
            },
            "selected_k": self.selected_k,
            "repeats": self.repeats,
            "skipped_episodes": self.skipped_episodes,
            "fold_retries": self.fold_retries,
        }


class _Accumulator:
    """Running batch-mean and episode-moment sums for one evaluation arm."""

    def __init__(self):
        self.cost_means: list[float] = []
        self.premium_means: list[float] = []
        self.cost_sum = 0.0
        self.cost_sumsq = 0.0
        self.episodes = 0
        self.truncated = 0

    def add(self, totals: np.ndarray, truncated: int, threshold: float) -> None:
        premiums = np.maximum(totals - threshold, 0.0)
        self.cost_means.append(float(totals.mean()))
        self.premium_means.append(float(premiums.mean()))
        self.cost_sum += float(totals.sum())
        self.cost_sumsq += float((totals**2).sum())
        self.episodes += len(totals)
        self.truncated += truncated

    def stats(self, warn_rate: float) -> EpisodeStats:
        return _stats_from_batches(
            self.cost_means,
            self.premium_means,
            self.cost_sum,
            self.cost_sumsq,
            self.episodes,
            self.truncated,
            warn_rate,
        )


def _block_distribution(states: np.ndarray, labels: np.ndarray, nb: int) -> np.ndarray:
    dist = np.bincount(labels[states], minlength=nb).astype(np.float64)
    return dist / dist.sum()


def cross_validate(
    episodes: list[EpisodeRecord],
    space: StateSpace,
    diagnoses: CategoryDictionary,
    k_values: list[int],
    n_groups: int,
    config: CvConfig,
    grouping: PhysicianGrouping | None = None,
) -> CvReport:
    """Score candidate block counts by episode-level 50/50 cross-validation.

    Each repeat splits the episodes in half, fits the full pipeline
    (transitions, spectral features, k-means, partition-kernel estimation,
    value iteration) on the training half for every k, then simulates the
    trained policy both on the training-half model (in-sample) and on a plain
    empirical model of the held-out half (out-of-sample). All k values share
    one simulation random stream per repeat, so their cost differences are
    not swamped by rollout noise.

    When grouping is None, physicians are regrouped on each training half;
    held-out episodes whose physician never appears in the training half are
    skipped, and folds that cannot be grouped or leave no usable held-out
    episodes are resampled up to config.max_fold_retries times. Passing a
    grouping fixes the group of every physician across repeats instead.
    """
    if len(episodes) < 4:
        raise FoldError("need at least 4 episodes to cross-validate")
    k_values = sorted(k_values)
    k_max = max(k_values)
    accumulators = {
        k: {"in": _Accumulator(), "out": _Accumulator()} for k in k_values
    }
    skipped_total = 0
    retries_total = 0

    for r in range(config.repeats):
        master = np.random.SeedSequence([config.seed, r])
        outcome = None
        for attempt in range(config.max_fold_retries):
            seeds = master.spawn(5)
            split_rng = np.random.default_rng(seeds[0])
            order = split_rng.permutation(len(episodes))
            half = (len(episodes) + 1) // 2
            train = [episodes[i] for i in order[:half]]
            held = [episodes[i] for i in order[half:]]
            if grouping is not None:
                fold_grouping = grouping
            else:
                try:
                    fold_grouping = group_physicians(
                        train,
                        n_groups,
                        seed=seeds[1],
                        balance_tolerance=config.balance_tolerance,
                        max_attempts=config.balance_max_attempts,
                    )
                except (BalanceError, DimensionError):
                    retries_total += 1
                    master = master.spawn(1)[0]
                    continue
            usable = [
                ep for ep in held if ep.physician_id in fold_grouping.assignment
            ]
            skipped = len(held) - len(usable)
            if not usable:
                retries_total += 1
                master = master.spawn(1)[0]
                continue
            outcome = (fold_grouping, train, usable, skipped, seeds)
            break
        if outcome is None:
            raise FoldError(
                f"repeat {r}: no usable fold after {config.max_fold_retries} retries"
            )
        fold_grouping, train, usable, skipped, seeds = outcome
        skipped_total += skipped

        train_data = extract_transitions(train, fold_grouping, space, diagnoses)
        held_data = extract_transitions(usable, fold_grouping, space, diagnoses)
        eval_mdp = build_empirical_mdp(
            held_data,
            KernelSpec(KernelVariant.PARTITION, partition=singleton_partition(space)),
            n_groups=n_groups,
        )
        eval_cdf = _transition_cdf(eval_mdp.transition)
        eval_start = initial_state_distribution(held_data)

        frequencies = count_frequencies(train_data)
        transition_matrix = normalize_rows(
            frequencies, config.zero_row_rule, terminal=space.terminal
        )
        features = top_right_singular_vectors(transition_matrix, k_max)
        cluster_seeds = seeds[2].spawn(len(k_values))

        for i, k in enumerate(k_values):
            sliced = type(features)(
                features=features.features[:, :k],
                singular_values=features.singular_values[:k],
            )
            partition = cluster_states(
                sliced, k, restarts=config.restarts, seed=cluster_seeds[i],
                terminal=space.terminal,
            )
            block_mdp = build_block_mdp(train_data, partition, n_groups)
            values = value_iteration(
                block_mdp,
                tol=config.vi_tol,
                max_iterations=config.vi_max_iterations,
                discount=config.discount,
            )
            block_policy = extract_policy(block_mdp, values.values, config.discount)
            state_policy = block_policy.actions[partition.labels]

            in_start = _block_distribution(
                train_data.states[train_data.positions == 0],
                partition.labels,
                partition.n_blocks_total,
            )
            totals, truncated = _simulate_batch(
                _transition_cdf(block_mdp.transition),
                block_mdp.cost,
                block_policy.actions,
                in_start,
                config.rollouts,
                config.max_steps,
                np.random.default_rng(seeds[3]),
            )
            accumulators[k]["in"].add(totals, truncated, config.premium_threshold)

            totals, truncated = _simulate_batch(
                eval_cdf,
                eval_mdp.cost,
                state_policy,
                eval_start,
                config.rollouts,
                config.max_steps,
                np.random.default_rng(seeds[4]),
            )
            accumulators[k]["out"].add(totals, truncated, config.premium_threshold)

    in_sample = {k: accumulators[k]["in"].stats(config.truncation_warn_rate) for k in k_values}
    out_sample = {k: accumulators[k]["out"].stats(config.truncation_warn_rate) for k in k_values}
    selected = min(k_values, key=lambda k: out_sample[k].mean_cost)
    return CvReport(
        k_values=k_values,
        in_sample=in_sample,
        out_of_sample=out_sample,
        selected_k=selected,
        repeats=config.repeats,
        skipped_episodes=skipped_total,
        fold_retries=retries_total,
    )


@dataclass
class DayStateIndex:
    """Day-stamped state sequences of real episodes, for conditioning."""

    episode_days: list[list[int]]
    episode_state_seq: list[list[int]]
    space: StateSpace

    @classmethod
    def from_episodes(
        cls,
        episodes: list[EpisodeRecord],
        space: StateSpace,
        diagnoses: CategoryDictionary,
    ) -> "DayStateIndex":
        days = [[c.start_day - ep.claims[0].start_day for c in ep.claims] for ep in episodes]
        seqs = [episode_states(ep, space, diagnoses) for ep in episodes]
        return cls(episode_days=days, episode_state_seq=seqs, space=space)

    def initial_distribution(self) -> np.ndarray:
        dist = np.zeros(self.space.n_states)
        for seq in self.episode_state_seq:
            dist[seq[0]] += 1.0
        if dist.sum() == 0:
            raise EmptySupportError("no episodes")
        return dist / dist.sum()

    def states_at_day(self, day: int, diagnosis: int | None = None) -> np.ndarray:
        """States occupied at a given day-into-episode, optionally filtered to
        one diagnosis category; days past an episode's last claim don't count."""
        hits = []
        for days, seq in zip(self.episode_days, self.episode_state_seq):
            if day < days[0] or day > days[-1]:
                continue
            pos = int(np.searchsorted(days, day, side="right")) - 1
            state = seq[pos]
            if diagnosis is not None:
                decoded = self.space.decode(state)
                if decoded is None or decoded[0] != diagnosis:
                    continue
            hits.append(state)
        return np.asarray(hits, dtype=np.int64)


@dataclass
class StartCondition:
    """Where forecast trajectories start.

    kind "state": a fixed state key; kind "category": the empirical states
    carrying one diagnosis category at the start day; kind "initial": the
    empirical first-claim states.
    """

    kind: str
    state: int | None = None
    category: str | None = None

    @classmethod
    def at_state(cls, state: int) -> "StartCondition":
        return cls(kind="state", state=state)

    @classmethod
    def at_category(cls, category: str) -> "StartCondition":
        return cls(kind="category", category=category)

    @classmethod
    def initial(cls) -> "StartCondition":
        return cls(kind="initial")


def resolve_condition(
    condition: StartCondition,
    space: StateSpace,
    diagnoses: CategoryDictionary,
    day_index: DayStateIndex | None,
    start_day: int,
) -> np.ndarray:
    """Start-state distribution for a forecast condition."""
    if condition.kind == "state":
        dist = np.zeros(space.n_states)
        dist[condition.state] = 1.0
        return dist
    if day_index is None:
        raise EmptySupportError("conditioning needs episode day data")
    if condition.kind == "initial":
        return day_index.initial_distribution()
    if condition.kind == "category":
        diagnosis = diagnoses.index_of(condition.category)
        states = day_index.states_at_day(start_day, diagnosis)
        if len(states) == 0:
            raise EmptySupportError(
                f"category {condition.category!r} never observed at day {start_day}"
            )
        dist = np.bincount(states, minlength=space.n_states).astype(np.float64)
        return dist / dist.sum()
    raise DimensionError(f"unknown condition kind {condition.kind!r}")


@dataclass
class ForecastMatrix:
    """Per-day distribution over diagnosis categories plus TERMINAL.

    matrix[i, c] is the fraction of trajectories whose state on day
    start_day + i carries diagnosis category c; the last column is the
    absorbed fraction and never decreases.
    """

    start_day: int
    horizon_days: int
    categories: list[str]
    matrix: np.ndarray
    n_trajectories: int


def forecast_pathway(
    mdp,
    policy: np.ndarray | None,
    start_distribution: np.ndarray,
    start_day: int,
    horizon_days: int,
    n_trajectories: int,
    gap_model: GapModel,
    seed: int = 0,
    max_steps: int = 200,
    categories: list[str] | None = None,
) -> ForecastMatrix:
    """Simulate day-stamped trajectories and tabulate daily category occupancy.

    The state between claims carries the last claim's category forward; once
    a trajectory is absorbed it counts in the TERMINAL column from its
    absorption day on. Trajectories still running at max_steps keep their
    last category through the horizon.
    """
    space = getattr(mdp, "space", None)
    n = mdp.transition.shape[1]
    terminal = n - 1
    if space is not None:
        n_categories = space.n_diagnoses
    else:
        n_categories = n - 1
    if categories is None:
        categories = [f"c{i}" for i in range(n_categories)]
    counts = np.zeros((horizon_days + 1, n_categories + 1))
    rng = np.random.default_rng(seed)
    start = np.asarray(start_distribution, dtype=np.float64)
    starts = rng.choice(n, size=n_trajectories, p=start)

    for i in range(n_trajectories):
        traj = simulate_episode(
            mdp,
            policy,
            int(starts[i]),
            gap_model,
            rng,
            max_steps=max_steps,
            start_day=start_day,
        )
        _tabulate(traj, counts, start_day, horizon_days, terminal, space, n_categories)
    matrix = counts / n_trajectories
    return ForecastMatrix(
        start_day=start_day,
        horizon_days=horizon_days,
        categories=list(categories) + ["terminal"],
        matrix=matrix,
        n_trajectories=n_trajectories,
    )


def _tabulate(traj, counts, start_day, horizon_days, terminal, space, n_categories):
    """Add one trajectory's daily category occupancy into counts."""
    if not traj.states:
        counts[:, n_categories] += 1.0
        return
    pos = 0
    for offset in range(horizon_days + 1):
        day = start_day + offset
        if traj.terminal_day is not None and day >= traj.terminal_day:
            counts[offset, n_categories] += 1.0
            continue
        while pos + 1 < len(traj.days) and traj.days[pos + 1] <= day:
            pos += 1
        state = traj.states[pos]
        if space is not None:
            category = space.decode(state)[0]
        else:
            category = state
        counts[offset, category] += 1.0


@dataclass
class Histogram:
    """Fixed-width cost histogram with summary statistics."""

    bin_width: float
    bins: dict[int, int]
    n: int
    mean: float
    std: float
    mean_premium: float

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "bins": {str(k): v for k, v in sorted(self.bins.items())},
            "n": self.n,
            "mean": self.mean,
            "std": self.std,
            "mean_premium": self.mean_premium,
        }


def export_histogram(
    costs: np.ndarray,
    bin_width: float,
    premium_threshold: float = PREMIUM_THRESHOLD,
) -> Histogram:
    """Histogram of episode costs into [i*w, (i+1)*w) bins.

    A cost exactly on a bin edge goes to the upper bin.
    """
    if bin_width <= 0:
        raise DimensionError("bin_width must be positive")
    costs = np.asarray(costs, dtype=np.float64)
    if (costs < 0).any():
        raise DimensionError("costs must be non-negative")
    indices = np.floor(costs / bin_width).astype(np.int64)
    unique, tallies = np.unique(indices, return_counts=True)
    bins = {int(i): int(c) for i, c in zip(unique, tallies)}
    premiums = np.maximum(costs - premium_threshold, 0.0)
    return Histogram(
        bin_width=float(bin_width),
        bins=bins,
        n=len(costs),
        mean=float(costs.mean()) if len(costs) else 0.0,
        std=float(costs.std(ddof=1)) if len(costs) > 1 else 0.0,
        mean_premium=float(premiums.mean()) if len(costs) else 0.0,
    )

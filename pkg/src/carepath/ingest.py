"""Claims ingestion: CSV rows to episodes, states, groups, and transitions.

The canonical input is a flat claims CSV, one row per claim line, with
episode-level fields repeated on every row. Ingestion assembles per-episode
claim sequences ordered by claim id, derives the (diagnosis, inpatient count)
state at each claim position, splits physicians into cost-balanced groups,
and emits the transition samples every later stage consumes.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BalanceError,
    DimensionError,
    GroupLookupError,
    IntegrityError,
    RowError,
    SchemaError,
    StateRangeError,
)
from .states import StateSpace

logger = logging.getLogger(__name__)

NA_LITERAL = "NA"
UNKNOWN_LABEL = "__unknown__"

REQUIRED_COLUMNS = (
    "episode_id",
    "beneficiary_id",
    "episode_start_day",
    "episode_end_day",
    "episode_total_cost",
    "physician_id",
    "claim_id",
    "claim_start_day",
    "claim_end_day",
    "claim_cost",
    "procedure_code",
    "procedure_category",
    "diagnosis_code",
    "diagnosis_category",
)
FLAG_COLUMN = "inpatient_flag"

_TRUE_FLAGS = {"1", "true", "t", "yes", "y"}
_FALSE_FLAGS = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class SchemaConfig:
    """Parsing knobs for claims CSV files.

    epoch_day is subtracted from every day field so foreign files with a
    different day origin line up. When the inpatient_flag column is missing,
    inpatient_categories (procedure-category labels) may be supplied to derive
    the flag; otherwise the missing column is a schema error. strict=False
    skips unparsable rows instead of raising.
    """

    epoch_day: int = 0
    strict: bool = True
    inpatient_categories: frozenset[str] | None = None


@dataclass(frozen=True)
class ClaimRecord:
    """One claim after merging rows that share a claim id."""

    claim_id: str
    start_day: int
    end_day: int
    cost: float
    procedure_code: str | None
    procedure_category: str | None
    diagnosis_code: str | None
    diagnosis_category: str | None
    inpatient: bool


@dataclass(frozen=True)
class ClaimRow(ClaimRecord):
    """A parsed CSV row: a claim line plus its episode-level fields."""

    episode_id: str = ""
    beneficiary_id: str = ""
    physician_id: str = ""
    episode_start_day: int = 0
    episode_end_day: int = 0
    episode_total_cost: float = 0.0


@dataclass(frozen=True)
class EpisodeRecord:
    """A treatment episode: ordered claims plus attribution fields."""

    episode_id: str
    beneficiary_id: str
    physician_id: str
    start_day: int
    end_day: int
    total_cost: float
    claims: tuple[ClaimRecord, ...]

    @property
    def n_claims(self) -> int:
        return len(self.claims)


class CategoryDictionary:
    """Ordered label-to-index dictionary for a categorical column."""

    def __init__(self, labels: list[str] | tuple[str, ...]):
        self.labels = tuple(labels)
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self._index) != len(self.labels):
            raise IntegrityError("category labels must be unique")

    @classmethod
    def from_observed(cls, labels, reserve_unknown: bool = False) -> "CategoryDictionary":
        """Build from observed labels, sorted; optionally append the reserved
        unknown slot at the last index."""
        ordered = sorted(set(labels))
        if reserve_unknown:
            if UNKNOWN_LABEL in ordered:
                raise IntegrityError(f"label {UNKNOWN_LABEL!r} is reserved")
            ordered.append(UNKNOWN_LABEL)
        return cls(ordered)

    def index_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise StateRangeError(f"label {label!r} not in dictionary") from None

    def get(self, label: str | None) -> int | None:
        if label is None:
            return None
        return self._index.get(label)

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def to_mapping(self) -> dict[str, int]:
        return dict(self._index)


def _parse_flag(raw: str) -> bool:
    low = raw.strip().lower()
    if low in _TRUE_FLAGS:
        return True
    if low in _FALSE_FLAGS:
        return False
    raise ValueError(f"bad boolean {raw!r}")


def _optional(raw: str) -> str | None:
    raw = raw.strip()
    if raw == NA_LITERAL or raw == "":
        return None
    return raw


def parse_claims(source, config: SchemaConfig | None = None) -> list[ClaimRow]:
    """Parse a claims CSV into one ClaimRow per line.

    Args:
        source: a path, a text stream, or a bytes stream.
        config: SchemaConfig; defaults are strict parsing with epoch day 0.

    Raises SchemaError when a required column is missing and RowError (strict
    mode) when a value cannot be parsed; non-strict mode skips bad rows.
    """
    config = config or SchemaConfig()
    if not hasattr(source, "read"):
        with open(source, "r", newline="", encoding="utf-8") as handle:
            return parse_claims(handle, config)
    if isinstance(source.read(0), bytes):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: no header row") from None
    header = [h.strip() for h in header]
    columns = {name: i for i, name in enumerate(header)}

    for name in REQUIRED_COLUMNS:
        if name not in columns:
            raise SchemaError(f"missing required column {name!r}")
    derive_flag = FLAG_COLUMN not in columns
    if derive_flag and config.inpatient_categories is None:
        raise SchemaError(
            f"missing required column {FLAG_COLUMN!r} "
            "(supply inpatient_categories to derive it)"
        )

    rows: list[ClaimRow] = []
    skipped = 0
    for line_no, raw in enumerate(reader, start=2):
        if not raw or all(not cell.strip() for cell in raw):
            continue
        try:
            if len(raw) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(raw)}")
            get = lambda name: raw[columns[name]].strip()  # noqa: E731
            cost = float(get("claim_cost"))
            total = float(get("episode_total_cost"))
            if cost < 0 or total < 0:
                raise ValueError("negative cost")
            procedure_category = _optional(get("procedure_category"))
            if derive_flag:
                inpatient = procedure_category in config.inpatient_categories
            else:
                inpatient = _parse_flag(raw[columns[FLAG_COLUMN]])
            row = ClaimRow(
                claim_id=get("claim_id"),
                start_day=int(get("claim_start_day")) - config.epoch_day,
                end_day=int(get("claim_end_day")) - config.epoch_day,
                cost=cost,
                procedure_code=_optional(get("procedure_code")),
                procedure_category=procedure_category,
                diagnosis_code=_optional(get("diagnosis_code")),
                diagnosis_category=_optional(get("diagnosis_category")),
                inpatient=inpatient,
                episode_id=get("episode_id"),
                beneficiary_id=get("beneficiary_id"),
                physician_id=get("physician_id"),
                episode_start_day=int(get("episode_start_day")) - config.epoch_day,
                episode_end_day=int(get("episode_end_day")) - config.epoch_day,
                episode_total_cost=total,
            )
        except (ValueError, IndexError) as exc:
            if config.strict:
                raise RowError(line_no, str(exc)) from exc
            skipped += 1
            continue
        rows.append(row)
    if skipped:
        logger.warning("skipped %d unparsable rows", skipped)
    return rows


def _merge_claims(claims: list[ClaimRow]) -> ClaimRecord:
    """Merge rows sharing a claim id: costs sum, first non-absent
    diagnosis/procedure wins, day span widens to cover all rows."""
    first = claims[0]
    if len(claims) == 1:
        return ClaimRecord(
            claim_id=first.claim_id,
            start_day=first.start_day,
            end_day=first.end_day,
            cost=first.cost,
            procedure_code=first.procedure_code,
            procedure_category=first.procedure_category,
            diagnosis_code=first.diagnosis_code,
            diagnosis_category=first.diagnosis_category,
            inpatient=first.inpatient,
        )

    def first_present(attr):
        return next((v for c in claims if (v := getattr(c, attr)) is not None), None)

    return ClaimRecord(
        claim_id=first.claim_id,
        start_day=min(c.start_day for c in claims),
        end_day=max(c.end_day for c in claims),
        cost=sum(c.cost for c in claims),
        procedure_code=first_present("procedure_code"),
        procedure_category=first_present("procedure_category"),
        diagnosis_code=first_present("diagnosis_code"),
        diagnosis_category=first_present("diagnosis_category"),
        inpatient=any(c.inpatient for c in claims),
    )


def assemble_episodes(
    rows: list[ClaimRow], cost_tolerance: float = 0.01
) -> list[EpisodeRecord]:
    """Group parsed rows into EpisodeRecords ordered by episode id.

    Claims within an episode are ordered by claim id (ascending); rows sharing
    a claim id merge into one claim. An episode naming several physicians or
    beneficiaries is rejected. A mismatch between the declared episode total
    cost and the claim-cost sum beyond cost_tolerance is logged, not fatal.
    """
    by_episode: dict[str, list[ClaimRow]] = {}
    for row in rows:
        by_episode.setdefault(row.episode_id, []).append(row)

    episodes = []
    mismatches = 0
    for episode_id in sorted(by_episode):
        group = by_episode[episode_id]
        physicians = {r.physician_id for r in group}
        if len(physicians) != 1:
            raise IntegrityError(
                f"episode {episode_id!r} names several physicians: {sorted(physicians)}"
            )
        beneficiaries = {r.beneficiary_id for r in group}
        if len(beneficiaries) != 1:
            raise IntegrityError(
                f"episode {episode_id!r} names several beneficiaries: {sorted(beneficiaries)}"
            )
        by_claim: dict[str, list[ClaimRow]] = {}
        for row in group:
            by_claim.setdefault(row.claim_id, []).append(row)
        claims = tuple(_merge_claims(by_claim[cid]) for cid in sorted(by_claim))
        total = group[0].episode_total_cost
        claim_sum = sum(c.cost for c in claims)
        if abs(total - claim_sum) > cost_tolerance:
            mismatches += 1
            logger.warning(
                "episode %s: declared total %.2f vs claim sum %.2f",
                episode_id,
                total,
                claim_sum,
            )
        episodes.append(
            EpisodeRecord(
                episode_id=episode_id,
                beneficiary_id=group[0].beneficiary_id,
                physician_id=group[0].physician_id,
                start_day=group[0].episode_start_day,
                end_day=group[0].episode_end_day,
                total_cost=total,
                claims=claims,
            )
        )
    if mismatches:
        logger.warning("%d episodes had total-cost mismatches", mismatches)
    return episodes


def build_dictionaries(
    episodes: list[EpisodeRecord],
) -> tuple[CategoryDictionary, CategoryDictionary]:
    """Diagnosis-category and procedure-code dictionaries from episodes.

    The diagnosis dictionary reserves its last index for the unknown slot used
    when an episode prefix carries no diagnosis at all.
    """
    diagnoses = set()
    procedures = set()
    for ep in episodes:
        for claim in ep.claims:
            if claim.diagnosis_category is not None:
                diagnoses.add(claim.diagnosis_category)
            if claim.procedure_code is not None:
                procedures.add(claim.procedure_code)
    return (
        CategoryDictionary.from_observed(diagnoses, reserve_unknown=True),
        CategoryDictionary.from_observed(procedures),
    )


def build_state(
    episode: EpisodeRecord,
    t: int,
    space: StateSpace,
    diagnoses: CategoryDictionary,
) -> int:
    """State index after observing claims 0..t of an episode.

    t equal to the episode length yields TERMINAL. The diagnosis component is
    the latest present diagnosis category at positions <= t (the reserved
    unknown index when none exists); the inpatient component counts inpatient
    claims at positions <= t, capped at the space maximum.
    """
    if not 0 <= t <= episode.n_claims:
        raise StateRangeError(
            f"claim position {t} outside [0, {episode.n_claims}] "
            f"for episode {episode.episode_id!r}"
        )
    if t == episode.n_claims:
        return space.terminal
    diagnosis = space.unknown_diagnosis
    for claim in reversed(episode.claims[: t + 1]):
        if claim.diagnosis_category is not None:
            diagnosis = diagnoses.index_of(claim.diagnosis_category)
            break
    inpatient = sum(1 for c in episode.claims[: t + 1] if c.inpatient)
    return space.index(diagnosis, min(inpatient, space.max_inpatient))


def episode_states(
    episode: EpisodeRecord, space: StateSpace, diagnoses: CategoryDictionary
) -> list[int]:
    """States after each claim prefix: element t is build_state(episode, t)."""
    out = []
    diagnosis = space.unknown_diagnosis
    inpatient = 0
    for claim in episode.claims:
        if claim.diagnosis_category is not None:
            diagnosis = diagnoses.index_of(claim.diagnosis_category)
        if claim.inpatient:
            inpatient += 1
        out.append(space.index(diagnosis, min(inpatient, space.max_inpatient)))
    return out


@dataclass(frozen=True)
class PhysicianGrouping:
    """Assignment of physicians to cost-balanced groups."""

    assignment: dict[str, int]
    n_groups: int
    group_means: tuple[float, ...]
    gap: float

    def group_of(self, physician_id: str) -> int:
        try:
            return self.assignment[physician_id]
        except KeyError:
            raise GroupLookupError(f"physician {physician_id!r} has no group") from None


def _group_stats(groups, totals, counts):
    means = []
    for members in groups:
        cost = sum(totals[p] for p in members)
        n = sum(counts[p] for p in members)
        means.append(cost / n)
    return means


def group_physicians(
    episodes: list[EpisodeRecord],
    n_groups: int,
    seed: int | np.random.SeedSequence = 0,
    balance_tolerance: float = 500.0,
    max_attempts: int = 2000,
) -> PhysicianGrouping:
    """Split physicians into near-equal groups with matched mean episode cost.

    Starts from a seeded random split with group sizes differing by at most
    one, then greedily applies the pairwise swap that most reduces the largest
    gap between group mean episode costs. Raises BalanceError when the gap
    cannot be brought under balance_tolerance.
    """
    totals: dict[str, float] = {}
    counts: dict[str, int] = {}
    for ep in episodes:
        totals[ep.physician_id] = totals.get(ep.physician_id, 0.0) + ep.total_cost
        counts[ep.physician_id] = counts.get(ep.physician_id, 0) + 1
    physicians = sorted(totals)
    if n_groups < 1:
        raise DimensionError("n_groups must be >= 1")
    if len(physicians) < n_groups:
        raise DimensionError(
            f"{n_groups} groups requested for {len(physicians)} physicians"
        )

    rng = np.random.default_rng(seed)
    order = [physicians[i] for i in rng.permutation(len(physicians))]
    groups = [order[g::n_groups] for g in range(n_groups)]

    means = _group_stats(groups, totals, counts)
    gap = max(means) - min(means)
    for _ in range(max_attempts):
        if gap <= balance_tolerance:
            break
        best = None
        for a in range(n_groups):
            for b in range(a + 1, n_groups):
                for i, p in enumerate(groups[a]):
                    for j, q in enumerate(groups[b]):
                        groups[a][i], groups[b][j] = q, p
                        trial = _group_stats(groups, totals, counts)
                        trial_gap = max(trial) - min(trial)
                        groups[a][i], groups[b][j] = p, q
                        if best is None or trial_gap < best[0]:
                            best = (trial_gap, a, i, b, j)
        if best is None or best[0] >= gap - 1e-12:
            break  # no swap improves
        _, a, i, b, j = best
        groups[a][i], groups[b][j] = groups[b][j], groups[a][i]
        means = _group_stats(groups, totals, counts)
        gap = max(means) - min(means)
    if gap > balance_tolerance:
        raise BalanceError(gap, balance_tolerance)

    assignment = {p: g for g, members in enumerate(groups) for p in members}
    return PhysicianGrouping(
        assignment=assignment,
        n_groups=n_groups,
        group_means=tuple(_group_stats(groups, totals, counts)),
        gap=gap,
    )


def grouping_from_assignment(
    episodes: list[EpisodeRecord],
    assignment: dict[str, int],
    n_groups: int,
) -> PhysicianGrouping:
    """Wrap a fixed physician-to-group map with its realized cost statistics.

    Used when groups are decided outside the balancing heuristic (for example
    read from a file); no balance tolerance is enforced.
    """
    totals: dict[str, float] = {}
    counts: dict[str, int] = {}
    for ep in episodes:
        totals[ep.physician_id] = totals.get(ep.physician_id, 0.0) + ep.total_cost
        counts[ep.physician_id] = counts.get(ep.physician_id, 0) + 1
    missing = sorted(p for p in totals if p not in assignment)
    if missing:
        raise GroupLookupError(f"physicians without a group: {missing[:5]}")
    bad = sorted({g for g in assignment.values() if not 0 <= g < n_groups})
    if bad:
        raise DimensionError(f"group indices {bad} outside 0..{n_groups - 1}")
    groups = [
        [p for p in sorted(totals) if assignment[p] == g] for g in range(n_groups)
    ]
    empty = [g for g, members in enumerate(groups) if not members]
    if empty:
        raise DimensionError(f"groups {empty} have no episodes")
    means = _group_stats(groups, totals, counts)
    return PhysicianGrouping(
        assignment=dict(assignment),
        n_groups=n_groups,
        group_means=tuple(means),
        gap=max(means) - min(means),
    )


@dataclass
class TransitionDataset:
    """Flat arrays of (state, group, cost, next state) samples.

    Each sample keeps a back-reference to its episode and claim position, and
    the claim's procedure-code index (-1 when absent) so prescription
    distributions can be derived later.
    """

    space: StateSpace
    n_groups: int
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    next_states: np.ndarray
    episode_index: np.ndarray
    positions: np.ndarray
    procedures: np.ndarray
    episode_ids: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.states)

    def visited_states(self) -> np.ndarray:
        """Distinct non-terminal states observed as transition sources."""
        return np.unique(self.states)


def extract_transitions(
    episodes: list[EpisodeRecord],
    grouping: PhysicianGrouping,
    space: StateSpace,
    diagnoses: CategoryDictionary,
    procedures: CategoryDictionary | None = None,
) -> TransitionDataset:
    """One transition sample per claim of every episode.

    Sample t of an episode is (state after claims 0..t, physician group, cost
    of claim t, state after claims 0..t+1); the last sample of an episode
    targets TERMINAL. Episodes must have at least one claim, and every
    physician must be present in the grouping.
    """
    states, actions, costs, next_states = [], [], [], []
    episode_index, positions, procedure_idx = [], [], []
    episode_ids = []

    for e_idx, ep in enumerate(episodes):
        if ep.n_claims == 0:
            raise IntegrityError(f"episode {ep.episode_id!r} has no claims")
        group = grouping.group_of(ep.physician_id)
        episode_ids.append(ep.episode_id)
        diagnosis = space.unknown_diagnosis
        inpatient = 0
        for t, claim in enumerate(ep.claims):
            if claim.diagnosis_category is not None:
                diagnosis = diagnoses.index_of(claim.diagnosis_category)
            if claim.inpatient:
                inpatient += 1
            nxt = space.index(diagnosis, min(inpatient, space.max_inpatient))
            if t > 0:
                next_states.append(nxt)
            states.append(nxt)
            actions.append(group)
            costs.append(claim.cost)
            episode_index.append(e_idx)
            positions.append(t)
            if procedures is not None and claim.procedure_code is not None:
                procedure_idx.append(procedures.index_of(claim.procedure_code))
            else:
                procedure_idx.append(-1)
        next_states.append(space.terminal)

    return TransitionDataset(
        space=space,
        n_groups=grouping.n_groups,
        states=np.asarray(states, dtype=np.int64),
        actions=np.asarray(actions, dtype=np.int64),
        costs=np.asarray(costs, dtype=np.float64),
        next_states=np.asarray(next_states, dtype=np.int64),
        episode_index=np.asarray(episode_index, dtype=np.int64),
        positions=np.asarray(positions, dtype=np.int64),
        procedures=np.asarray(procedure_idx, dtype=np.int64),
        episode_ids=episode_ids,
    )


def initial_state_distribution(dataset: TransitionDataset) -> np.ndarray:
    """Empirical distribution of first-claim states over the state space."""
    first = dataset.states[dataset.positions == 0]
    if len(first) == 0:
        raise IntegrityError("dataset has no episodes")
    dist = np.bincount(first, minlength=dataset.space.n_states).astype(float)
    return dist / dist.sum()

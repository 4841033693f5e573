"""Spectral state compression: frequency matrix, SVD features, clustering.

Transition samples pooled over groups give a state-by-state frequency matrix;
its row-normalized form is factored by SVD and the rows of the top right
singular vectors serve as low-dimensional state features. K-means over those
feature rows partitions the non-terminal states into blocks; TERMINAL always
forms its own singleton block with the last block index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ClusteringError, DimensionError
from .ingest import TransitionDataset
from .states import StateSpace


class ZeroRowRule(str, Enum):
    """How to complete frequency-matrix rows of never-observed states."""

    SELF_LOOP = "self_loop"
    UNIFORM = "uniform"


def count_frequencies(dataset: TransitionDataset) -> np.ndarray:
    """Square count matrix F with F[s, t] = number of samples s -> t.

    Counts pool over groups. The TERMINAL row stays all zero: nothing leaves
    the terminal state in the data.
    """
    n = dataset.space.n_states
    flat = dataset.states * n + dataset.next_states
    counts = np.bincount(flat, minlength=n * n)
    return counts.reshape(n, n).astype(np.int64)


def normalize_rows(
    frequencies: np.ndarray,
    zero_row_rule: ZeroRowRule = ZeroRowRule.SELF_LOOP,
    terminal: int | None = None,
) -> np.ndarray:
    """Row-normalize a frequency matrix into a stochastic matrix.

    Zero rows become self-loops or uniform rows per zero_row_rule; the
    terminal row (by convention the last row unless given) is always a
    self-loop regardless of the rule.
    """
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if frequencies.ndim != 2 or frequencies.shape[0] != frequencies.shape[1]:
        raise DimensionError(f"frequency matrix must be square, got {frequencies.shape}")
    n = frequencies.shape[0]
    if terminal is None:
        terminal = n - 1
    sums = frequencies.sum(axis=1)
    out = np.zeros_like(frequencies)
    observed = sums > 0
    out[observed] = frequencies[observed] / sums[observed, None]
    empty = ~observed
    if empty.any():
        if zero_row_rule == ZeroRowRule.SELF_LOOP:
            idx = np.where(empty)[0]
            out[idx, idx] = 1.0
        else:
            out[empty] = 1.0 / n
    out[terminal] = 0.0
    out[terminal, terminal] = 1.0
    return out


@dataclass
class SpectralFeatures:
    """Rows of the top-k right singular vectors, one row per state."""

    features: np.ndarray
    singular_values: np.ndarray

    @property
    def k(self) -> int:
        return self.features.shape[1]


def top_right_singular_vectors(matrix: np.ndarray, k: int) -> SpectralFeatures:
    """Top-k right singular vectors of a square matrix, as state features.

    Columns are ordered by non-increasing singular value. Each column's sign
    is fixed so its largest-magnitude entry is positive (first occurrence on
    ties), making the factorization deterministic.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape[1] != n:
        raise DimensionError(f"matrix must be square, got {matrix.shape}")
    if not 1 <= k <= n:
        raise DimensionError(f"k={k} outside [1, {n}]")
    _, sigma, vt = np.linalg.svd(matrix)
    features = vt[:k].T.copy()
    for j in range(k):
        pivot = np.argmax(np.abs(features[:, j]))
        if features[pivot, j] < 0:
            features[:, j] = -features[:, j]
    return SpectralFeatures(features=features, singular_values=sigma[:k].copy())


@dataclass
class StatePartition:
    """Assignment of every state to a block; TERMINAL is block n_blocks.

    labels[s] is the block of state s over the full state space; non-terminal
    blocks are 0..n_blocks-1 and the terminal singleton block is n_blocks.
    """

    labels: np.ndarray
    n_blocks: int
    objective: float
    centroids: np.ndarray | None = None

    @property
    def terminal_block(self) -> int:
        return self.n_blocks

    @property
    def n_blocks_total(self) -> int:
        return self.n_blocks + 1

    def members(self, block: int) -> np.ndarray:
        return np.where(self.labels == block)[0]

    def to_mapping(self, space: StateSpace) -> dict[str, int]:
        return {space.key(s): int(b) for s, b in enumerate(self.labels)}

    @classmethod
    def from_mapping(cls, mapping: dict[str, int], space: StateSpace) -> "StatePartition":
        labels = np.zeros(space.n_states, dtype=np.int64)
        for key, block in mapping.items():
            labels[space.from_key(key)] = block
        n_blocks = int(labels[space.terminal])
        return cls(labels=labels, n_blocks=n_blocks, objective=float("nan"))


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator):
    """One seeded k-means++ / Lloyd run; returns (labels, centroids, sse)."""
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(n)]
            continue
        centroids[j] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, ((points - centroids[j]) ** 2).sum(axis=1))

    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(300):
        distances = _squared_distances(points, centroids)
        new_labels = distances.argmin(axis=1)
        own = distances[np.arange(n), new_labels]
        for j in range(k):
            if not (new_labels == j).any():
                # reseed each empty cluster with the point farthest from its
                # current centroid, stealing it outright
                farthest = int(own.argmax())
                new_labels[farthest] = j
                centroids[j] = points[farthest]
                own[farthest] = 0.0
        if (new_labels == labels).all():
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            centroids[j] = points[mask].mean(axis=0)
    distances = _squared_distances(points, centroids)
    sse = float(distances[np.arange(n), labels].sum())
    return labels, centroids, sse


def cluster_states(
    features: SpectralFeatures | np.ndarray,
    k: int,
    restarts: int = 100,
    seed: int | np.random.SeedSequence = 0,
    terminal: int | None = None,
) -> StatePartition:
    """Partition non-terminal states into k blocks by k-means on feature rows.

    Runs `restarts` independent k-means++/Lloyd restarts with per-restart
    seeds derived from `seed` and keeps the lowest within-cluster sum of
    squares (ties: lowest restart index). The terminal state (last row unless
    given) is excluded from clustering and appended as singleton block k.
    """
    rows = features.features if isinstance(features, SpectralFeatures) else np.asarray(features)
    if restarts < 1:
        raise DimensionError("restarts must be >= 1")
    n = rows.shape[0]
    if terminal is None:
        terminal = n - 1
    points = np.delete(rows, terminal, axis=0)
    if k < 1 or k > len(points):
        raise DimensionError(f"k={k} outside [1, {len(points)}]")
    if len(np.unique(points, axis=0)) < k:
        raise ClusteringError(
            f"only {len(np.unique(points, axis=0))} distinct feature rows for k={k}"
        )

    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    streams = seed.spawn(restarts)
    best = None
    for r in range(restarts):
        labels, centroids, sse = _kmeans_once(points, k, np.random.default_rng(streams[r]))
        if best is None or sse < best[0]:
            best = (sse, labels, centroids)
    sse, labels, centroids = best

    full = np.empty(n, dtype=np.int64)
    full[np.arange(n) != terminal] = labels
    full[terminal] = k
    return StatePartition(labels=full, n_blocks=k, objective=sse, centroids=centroids)


def singleton_partition(space: StateSpace) -> StatePartition:
    """Every non-terminal state its own block; terminal keeps the last block."""
    labels = np.arange(space.n_states, dtype=np.int64)
    return StatePartition(
        labels=labels, n_blocks=space.n_states - 1, objective=0.0, centroids=None
    )

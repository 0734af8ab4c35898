"""Evaluation: threshold tuning, binary prediction, graded entailment scoring.

Binary task: a pair (u, v) is predicted to be a true relation iff
D(u || v) falls below a threshold tuned on a labeled validation set.

Graded task: a word pair scores the negated minimum divergence over the
cross product of the words' synset embeddings; words without synsets get the
median of the scored pairs, and agreement with gold scores is measured by
Spearman rank correlation with average ranks on ties.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

from .densities import KL, DivergenceKind, divergence_batch
from .hierarchy import NodeId
from .training import EmbeddingTable, TrainConfig

T = TypeVar("T")


@dataclass(frozen=True)
class LabeledPairSet:
    """Parallel arrays of (u, v) node indices and boolean labels."""

    u: np.ndarray
    v: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.u) == len(self.v) == len(self.labels)):
            raise ValueError("u, v, labels must have equal lengths")
        if len(self.u) == 0:
            raise ValueError("labeled pair set is empty")

    def __len__(self) -> int:
        return len(self.u)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, int, bool]]) -> "LabeledPairSet":
        arr = np.asarray([(u, v) for u, v, _ in pairs], dtype=np.int64)
        labels = np.asarray([bool(lab) for _, _, lab in pairs])
        return cls(arr[:, 0], arr[:, 1], labels)


@dataclass(frozen=True)
class GradedPair:
    word_u: str
    word_v: str
    gold: float
    synsets_u: tuple[int, ...]
    synsets_v: tuple[int, ...]


@dataclass(frozen=True)
class BinaryReport:
    task = "hypernym-binary"
    threshold: float
    accuracy: float


@dataclass(frozen=True)
class GradedReport:
    task = "graded-entailment"
    spearman_rho: float
    scores: tuple[float, ...]


def _pair_divergences(pairs: LabeledPairSet, table: EmbeddingTable, kind: DivergenceKind):
    return divergence_batch(
        kind,
        table.means[pairs.u],
        table.log_vars[pairs.u],
        table.means[pairs.v],
        table.log_vars[pairs.v],
    )


def tune_threshold(val: LabeledPairSet, table: EmbeddingTable, cfg: TrainConfig) -> float:
    """Threshold maximizing accuracy of "true iff D < t" on the validation set.

    Candidates are the midpoints between adjacent distinct divergence values
    plus one candidate below the minimum and one above the maximum; the
    lowest best candidate wins, so a separable set yields the midpoint of
    the separating gap.
    """
    labels = val.labels
    if labels.all() or not labels.any():
        raise ValueError("threshold tuning needs both labels present")
    scores = _pair_divergences(val, table, cfg.kind)

    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = labels[order].astype(np.int64)
    # accuracy(t) = #pos below t + #neg at/above t
    prefix_pos = np.concatenate([[0], np.cumsum(sorted_pos)])
    prefix_neg = np.concatenate([[0], np.cumsum(1 - sorted_pos)])
    total_neg = prefix_neg[-1]

    distinct = np.unique(sorted_scores)
    candidates = np.concatenate(
        [[distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2.0, [distinct[-1] + 1.0]]
    )
    cuts = np.searchsorted(sorted_scores, candidates, side="left")
    correct = prefix_pos[cuts] + (total_neg - prefix_neg[cuts])
    return float(candidates[int(np.argmax(correct))])


def binary_accuracy(
    test: LabeledPairSet, threshold: float, table: EmbeddingTable, cfg: TrainConfig
) -> float:
    """Fraction of pairs whose prediction (D < threshold) matches the label."""
    scores = _pair_divergences(test, table, cfg.kind)
    return float(np.mean((scores < threshold) == test.labels))


def graded_score(p: GradedPair, table: EmbeddingTable, cfg: TrainConfig) -> float | None:
    """Negated minimum divergence over all synset pairs; None when either
    word has no synsets in the model."""
    if not p.synsets_u or not p.synsets_v:
        return None
    su = np.repeat(np.asarray(p.synsets_u, dtype=np.int64), len(p.synsets_v))
    sv = np.tile(np.asarray(p.synsets_v, dtype=np.int64), len(p.synsets_u))
    vals = divergence_batch(
        cfg.kind,
        table.means[su],
        table.log_vars[su],
        table.means[sv],
        table.log_vars[sv],
    )
    return -float(np.min(vals))


def impute_missing(scores: list[tuple[T, float | None]]) -> list[tuple[T, float]]:
    """Replace missing scores with the median of the non-missing ones."""
    present = [s for _, s in scores if s is not None]
    if not present:
        raise ValueError("all scores are missing; nothing to impute from")
    median = float(statistics.median(present))
    return [(item, median if s is None else s) for item, s in scores]


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average (fractional) ranks on ties."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("spearman needs two equal-length lists of size >= 2")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    sx = rx - rx.mean()
    sy = ry - ry.mean()
    denom = np.sqrt(np.sum(sx * sx) * np.sum(sy * sy))
    if denom == 0.0:
        raise ValueError("spearman undefined: a list has zero rank variance")
    return float(np.sum(sx * sy) / denom)


def divergence_matrix(
    node_ids: Sequence[int],
    table: EmbeddingTable,
    kind: DivergenceKind = KL,
) -> np.ndarray:
    """Pairwise matrix with entry (i, j) = D(node j || node i); zero diagonal.

    Row i collects the divergences of every other node into node i's slot,
    mirroring a "column entails row" reading of the matrix.
    """
    ids = np.asarray(node_ids, dtype=np.int64)
    k = len(ids)
    rows = np.repeat(ids, k)
    cols = np.tile(ids, k)
    vals = divergence_batch(
        kind,
        table.means[cols],
        table.log_vars[cols],
        table.means[rows],
        table.log_vars[rows],
    ).reshape(k, k)
    np.fill_diagonal(vals, 0.0)
    return vals


def volume_report(nodes: Sequence[NodeId], table: EmbeddingTable) -> list[tuple[str, float]]:
    """(name, log det covariance) for each node, broadest first; ties by name."""
    entries = [
        (node.name, float(np.sum(table.log_vars[node.index]))) for node in nodes
    ]
    return sorted(entries, key=lambda e: (-e[1], e[0]))

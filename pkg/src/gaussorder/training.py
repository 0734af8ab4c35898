"""Losses, initialization, sparse Adam, and the minibatch training loop.

Two losses are available:

* ``encapsulation`` -- per true pair (u, v) pay the thresholded penalty
  d_gamma(u, v) directly, and per negative pair (u', v') pay the hinge
  max(0, margin - d_gamma(u', v')).  This is the primary loss.
* ``rank``          -- classic relative margin on (positive, negative) pair
  couples: max(0, margin - E(pos) + E(neg)) with E = -D (untresholded);
  kept as an ablation baseline.

Gradients touch only the rows that appear in a batch, and the Adam update is
sparse in the same sense: moments of untouched rows are frozen, not decayed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .densities import KL, DivergenceKind, PenaltyConfig, divergence_batch_with_grad
from .errors import TrainingError
from .hierarchy import HierarchyGraph, NegSpec, make_negatives_grouped

LOSS_ENCAPSULATION = "encapsulation"
LOSS_RANK = "rank"


@dataclass
class EmbeddingTable:
    """All node embeddings: row i holds the mean and log-variances of node i."""

    means: np.ndarray
    log_vars: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.log_vars.shape or self.means.ndim != 2:
            raise ValueError("means and log_vars must share an (n, d) shape")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.means.copy(), self.log_vars.copy())

    def gaussian(self, i: int):
        from .densities import DiagGaussian

        return DiagGaussian(self.means[i], self.log_vars[i])


@dataclass
class TrainConfig:
    margin: float = 2000.0
    init_var: float = 5e-5
    gamma: float = 500.0
    kind: DivergenceKind = KL
    dim: int = 50
    neg: NegSpec = field(default_factory=lambda: NegSpec(s1=1.0, s2=1.0, s4=1.0))
    batch_size: int = 500
    epochs: int = 20
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: str = LOSS_ENCAPSULATION
    renormalize_means: bool = False  # project means back to unit norm each step

    def validate(self) -> None:
        if not (math.isfinite(self.margin) and self.margin > 0.0):
            raise ValueError("margin must be positive")
        if not (math.isfinite(self.init_var) and self.init_var > 0.0):
            raise ValueError("init_var must be positive")
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ValueError("gamma must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ValueError("adam_eps must be positive")
        if self.loss not in (LOSS_ENCAPSULATION, LOSS_RANK):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def penalty(self) -> PenaltyConfig:
        return PenaltyConfig(self.kind, self.gamma)

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class SparseGrads:
    """Gradients for the rows listed in ``rows`` only."""

    rows: np.ndarray
    means: np.ndarray
    log_vars: np.ndarray


@dataclass
class AdamState:
    m_means: np.ndarray
    v_means: np.ndarray
    m_log_vars: np.ndarray
    v_log_vars: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int, d: int) -> "AdamState":
        shape = (n, d)
        return cls(
            np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(shape)
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_accuracy: float | None


def init_embeddings(n: int, cfg: TrainConfig, rng: np.random.Generator) -> EmbeddingTable:
    """Unit-norm random means; every log-variance set to log(init_var)."""
    if n < 1:
        raise ValueError("need at least one node")
    means = rng.standard_normal((n, cfg.dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    means /= norms
    log_vars = np.full((n, cfg.dim), math.log(cfg.init_var))
    return EmbeddingTable(means, log_vars)


def _as_pair_array(pairs, n: int, what: str) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{what} must be (k, 2) index pairs")
    if arr.min() < 0 or arr.max() >= n:
        raise ValueError(f"{what} contains a node index outside [0, {n})")
    return arr


def _gather_with_grad(kind, table, pairs):
    mf = table.means[pairs[:, 0]]
    lf = table.log_vars[pairs[:, 0]]
    mg = table.means[pairs[:, 1]]
    lg = table.log_vars[pairs[:, 1]]
    return divergence_batch_with_grad(kind, mf, lf, mg, lg)


def _scatter(rows_list, mean_list, logvar_list, d) -> SparseGrads:
    rows = np.concatenate(rows_list) if rows_list else np.empty(0, dtype=np.int64)
    if rows.size == 0:
        return SparseGrads(rows, np.empty((0, d)), np.empty((0, d)))
    uniq, inv = np.unique(rows, return_inverse=True)
    g_means = np.zeros((uniq.size, d))
    g_log_vars = np.zeros((uniq.size, d))
    np.add.at(g_means, inv, np.concatenate(mean_list))
    np.add.at(g_log_vars, inv, np.concatenate(logvar_list))
    return SparseGrads(uniq, g_means, g_log_vars)


def encapsulation_loss(
    batch_pos,
    batch_neg,
    table: EmbeddingTable,
    cfg: TrainConfig,
) -> tuple[float, SparseGrads]:
    """Thresholded-penalty loss over a batch, with sparse per-node gradients.

    The same thresholded penalty d_gamma enters both terms: positives pay
    d_gamma(u, v); negatives pay max(0, margin - d_gamma(u', v')).  Both
    hinge kinks use subgradient 0, so a pair sitting exactly on gamma or on
    the margin contributes no gradient.
    """
    pos = _as_pair_array(batch_pos, table.n, "batch_pos")
    neg = _as_pair_array(batch_neg, table.n, "batch_neg")
    if pos.shape[0] == 0:
        raise ValueError("positive batch is empty")

    val_p, dmf_p, dlf_p, dmg_p, dlg_p = _gather_with_grad(cfg.kind, table, pos)
    over_p = val_p - cfg.gamma
    active_p = over_p > 0.0
    loss = float(np.sum(over_p[active_p]))
    w_p = active_p.astype(np.float64)[:, None]

    rows = [pos[:, 0], pos[:, 1]]
    g_means = [w_p * dmf_p, w_p * dmg_p]
    g_log_vars = [w_p * dlf_p, w_p * dlg_p]

    if neg.shape[0]:
        val_n, dmf_n, dlf_n, dmg_n, dlg_n = _gather_with_grad(cfg.kind, table, neg)
        pen_n = np.maximum(0.0, val_n - cfg.gamma)
        hinge = cfg.margin - pen_n
        active_n = hinge > 0.0
        loss += float(np.sum(hinge[active_n]))
        w_n = -(active_n & (val_n > cfg.gamma)).astype(np.float64)[:, None]
        rows += [neg[:, 0], neg[:, 1]]
        g_means += [w_n * dmf_n, w_n * dmg_n]
        g_log_vars += [w_n * dlf_n, w_n * dlg_n]

    return loss, _scatter(rows, g_means, g_log_vars, table.d)


def rank_loss(
    batch_pos,
    batch_neg,
    table: EmbeddingTable,
    cfg: TrainConfig,
) -> tuple[float, SparseGrads]:
    """Relative-margin baseline: max(0, margin - E(pos) + E(neg)), E = -D.

    ``batch_pos`` and ``batch_neg`` are aligned: row i of each forms one
    (positive, negative) couple.  The divergence enters raw, without the
    gamma threshold.
    """
    pos = _as_pair_array(batch_pos, table.n, "batch_pos")
    neg = _as_pair_array(batch_neg, table.n, "batch_neg")
    if pos.shape[0] == 0:
        raise ValueError("positive batch is empty")
    if pos.shape[0] != neg.shape[0]:
        raise ValueError("rank loss needs one negative per positive")

    val_p, dmf_p, dlf_p, dmg_p, dlg_p = _gather_with_grad(cfg.kind, table, pos)
    val_n, dmf_n, dlf_n, dmg_n, dlg_n = _gather_with_grad(cfg.kind, table, neg)
    terms = cfg.margin + val_p - val_n
    active = terms > 0.0
    loss = float(np.sum(terms[active]))
    w = active.astype(np.float64)[:, None]

    grads = _scatter(
        [pos[:, 0], pos[:, 1], neg[:, 0], neg[:, 1]],
        [w * dmf_p, w * dmg_p, -w * dmf_n, -w * dmg_n],
        [w * dlf_p, w * dlg_p, -w * dlf_n, -w * dlg_n],
        table.d,
    )
    return loss, grads


def adam_step(
    table: EmbeddingTable,
    grads: SparseGrads,
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[EmbeddingTable, AdamState]:
    """Bias-corrected Adam on the touched rows only; one global step count.

    Rows absent from ``grads`` keep parameters and moments untouched, which
    matches a dense step in which their gradient is zero and their moment
    decay is skipped.
    """
    for name, g in (("means", grads.means), ("log_vars", grads.log_vars)):
        if g.size and not np.isfinite(g).all():
            bad = grads.rows[~np.isfinite(g).all(axis=1)][0]
            raise TrainingError(f"non-finite {name} gradient for node {int(bad)}")

    state.t += 1
    if grads.rows.size == 0:
        return table, state
    rows = grads.rows
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t

    for g, m, v, param in (
        (grads.means, state.m_means, state.v_means, table.means),
        (grads.log_vars, state.m_log_vars, state.v_log_vars, table.log_vars),
    ):
        m[rows] = b1 * m[rows] + (1.0 - b1) * g
        v[rows] = b2 * v[rows] + (1.0 - b2) * g * g
        m_hat = m[rows] / bc1
        v_hat = v[rows] / bc2
        param[rows] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

    if cfg.renormalize_means:
        norms = np.linalg.norm(table.means[rows], axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        table.means[rows] /= norms
    return table, state


def num_batches(n_pairs: int, batch_size: int) -> int:
    return -(-n_pairs // batch_size)


def train(
    graph: HierarchyGraph,
    cfg: TrainConfig,
    callbacks: Iterable[Callable[[EpochRecord], None]] | None = None,
    val=None,
) -> EmbeddingTable:
    """Train embeddings over the graph's closure pairs.

    Each epoch reshuffles all closure pairs, draws negatives per the
    configured NegSpec, and applies sparse Adam.  When ``val`` (a
    ``LabeledPairSet``) is given, every epoch tunes a decision threshold on
    it and the table snapshot with the best validation accuracy is returned;
    otherwise the final table is returned.
    """
    cfg.validate()
    if not graph.has_closure:
        raise ValueError("graph closure must be computed before training")
    callbacks = list(callbacks) if callbacks is not None else []

    rng = np.random.default_rng(cfg.seed)
    table = init_embeddings(graph.n, cfg, rng)
    if cfg.epochs == 0:
        return table

    pairs = graph.closure_pairs()
    if pairs.shape[0] == 0:
        raise ValueError("graph closure has no pairs to train on")
    state = AdamState.zeros(graph.n, cfg.dim)
    best_acc = -1.0
    best_table: EmbeddingTable | None = None

    for epoch in range(cfg.epochs):
        perm = rng.permutation(pairs.shape[0])
        total = 0.0
        for start in range(0, pairs.shape[0], cfg.batch_size):
            pos = pairs[perm[start : start + cfg.batch_size]]
            pos_list = [(int(u), int(v)) for u, v in pos]
            grouped = make_negatives_grouped(graph, pos_list, cfg.neg, rng)
            if cfg.loss == LOSS_RANK:
                rank_pos = [p for p, negs in zip(pos_list, grouped) for _ in negs]
                rank_neg = [neg for negs in grouped for neg in negs]
                loss, grads = rank_loss(rank_pos, rank_neg, table, cfg)
            else:
                flat = [neg for negs in grouped for neg in negs]
                loss, grads = encapsulation_loss(pos_list, flat, table, cfg)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss!r} at epoch {epoch}, batch start {start}"
                )
            total += loss
            table, state = adam_step(table, grads, state, cfg)

        val_acc: float | None = None
        if val is not None:
            from . import evaluation  # deferred: evaluation imports this module

            threshold = evaluation.tune_threshold(val, table, cfg)
            val_acc = evaluation.binary_accuracy(val, threshold, table, cfg)
            if val_acc > best_acc:
                best_acc = val_acc
                best_table = table.copy()

        record = EpochRecord(epoch, total / pairs.shape[0], val_acc)
        for cb in callbacks:
            cb(record)

    if val is not None and best_table is not None:
        return best_table
    return table

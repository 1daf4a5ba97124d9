"""Importance-score pairs for local hypotheses.

Each hypothesis ``(j, label)`` gets a pair ``(t, tk)`` measuring how much
the variable and its knockoff contribute to predicting the outcome within
the subgroup. The construction guarantees the swap-equivariance property
that drives FDR control: every entry sees the true identities of ``x_j``
and ``xk_j`` only through its own subgroup's rows, while all other
variables (and all other rows) enter through the cloaked view, and every
random choice (fold assignment) is seeded by the entry's name, never by
data values. Swapping a subgroup's columns in the input therefore swaps
exactly that entry's pair and leaves the rest bit-identical.

Two computation paths are provided: a per-hypothesis path with
empirical-prior penalty weights shared across subgroups, and a batch path
that fits one model per group of variables with identical subgroup rules
(and never uses prior weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import (BlockMap, DataBundle, HypothesisId, PartitionSet,
                   subgroup_members)
from .lasso import CvWorkspace, FitOptions, lasso_cv, standardize
from .partition import group_batches
from .rng import derive_seed


@dataclass(frozen=True)
class ScoreEntry:
    t: float
    tk: float
    n_rows: int
    skipped: bool = False


@dataclass
class ScoreTable:
    """Score pairs keyed by hypothesis id, plus a fitted-model counter."""

    entries: dict = field(default_factory=dict)
    models_fitted: int = 0

    def items(self):
        return sorted(self.entries.items(), key=lambda kv: kv[0])

    def __getitem__(self, key) -> ScoreEntry:
        return self.entries[HypothesisId(*key)]

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class PriorWeights:
    """Per-variable penalty weights, decreasing in the cloaked-fit scores."""

    pi: np.ndarray
    zeta_offset: float


@dataclass(frozen=True)
class ScoreConfig:
    """How score pairs are computed.

    ``path`` selects the per-hypothesis weighted procedure ("local") or the
    shared-model shortcut ("batch"). ``min_subgroup`` rows are required to
    fit a local model; smaller subgroups are skipped with zero scores,
    which keeps them inert downstream.
    """

    path: str = "local"
    use_prior: bool = True
    zeta_offset: float = 0.05
    xi_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    min_subgroup: int = 30
    opts: FitOptions = FitOptions()

    def __post_init__(self):
        if self.path not in ("local", "batch"):
            raise ValueError(f"unknown score path {self.path!r}")
        if self.zeta_offset <= 0:
            raise ValueError("zeta_offset must be positive")


def prior_weights(cloaked: DataBundle, zeta_offset: float, seed: int,
                  opts: FitOptions = FitOptions()) -> PriorWeights:
    """Weights ``1 / (offset + |b_j| + |b_{j+p}|)`` from a cloaked lasso fit."""
    raw = np.hstack([cloaked.x, cloaked.xk, cloaked.z])
    design = standardize(raw)
    factors = np.concatenate([np.ones(2 * cloaked.p), np.zeros(cloaked.m)])
    _, fit = lasso_cv(design, cloaked.y, factors, folds=opts.cv_folds,
                      grid_size=opts.grid_size, grid_ratio=opts.grid_ratio,
                      seed=seed, tol=opts.tol, cv_tol=opts.cv_tol,
                      max_sweeps=opts.max_sweeps,
                      path_patience=opts.path_patience)
    p = cloaked.p
    strength = np.abs(fit.coef[:p]) + np.abs(fit.coef[p:2 * p])
    return PriorWeights(1.0 / (zeta_offset + strength), zeta_offset)


def _pair_scores(design, coef, pos_t, pos_tk):
    """Absolute coefficients of a revealed pair, symmetrized if the two
    standardized columns are exactly identical (the solution is then only
    determined up to redistributing weight between them)."""
    if np.array_equal(design.values[:, pos_t], design.values[:, pos_tk]):
        half = 0.5 * (abs(coef[pos_t]) + abs(coef[pos_tk]))
        return half, half
    return abs(float(coef[pos_t])), abs(float(coef[pos_tk]))


def local_score_pair(d: DataBundle, cloaked: DataBundle,
                     partition: PartitionSet, j: int, label: int,
                     prior: Optional[PriorWeights], seed: int,
                     cfg: ScoreConfig = ScoreConfig(),
                     scope: Optional[Sequence[int]] = None) -> ScoreEntry:
    """Score pair for one hypothesis via a weighted local lasso.

    The design is ``[x_j, xk_j, cloaked pairs of the other variables, z]``
    restricted to the subgroup's rows. The penalty level is tuned first,
    then the prior-mixing weight ``xi`` over ``cfg.xi_grid``; with
    ``xi = 0`` the fit reduces to an unweighted local lasso.
    """
    rows = subgroup_members(partition, j, label, d.z)
    if len(rows) < cfg.min_subgroup:
        return ScoreEntry(0.0, 0.0, len(rows), True)
    if scope is None:
        scope = range(d.p)
    others = np.array([v for v in scope if v != j], dtype=int)
    raw = np.hstack([
        d.x[rows][:, [j]],
        d.xk[rows][:, [j]],
        cloaked.x[rows][:, others],
        cloaked.xk[rows][:, others],
        cloaked.z[rows],
    ])
    design = standardize(raw)
    n_pairs = 1 + len(others)
    # variable behind each x/xk column: [x_j, xk_j, others x, others xk]
    pair_vars = np.concatenate([[j, j], others, others]).astype(int)
    factors = np.concatenate([np.ones(2 * n_pairs), np.zeros(d.m)])
    opts = cfg.opts
    ws = CvWorkspace(design, d.y[rows], factors, opts.cv_folds, seed)
    cv, fit = ws.cv(opts.grid_size, opts.grid_ratio, opts.tol, opts.cv_tol,
                    opts.max_sweeps, opts.path_patience)
    if cfg.use_prior and prior is not None and len(cfg.xi_grid) > 1:
        lam = cv.selected_lambda
        pair_pi = prior.pi[pair_vars]
        pens = [np.concatenate([lam * (1 - xi) + xi * pair_pi,
                                np.zeros(d.m)]) for xi in cfg.xi_grid]
        losses = ws.penalty_losses(pens, opts.cv_tol, opts.max_sweeps)
        xi_hat = cfg.xi_grid[int(np.argmin(losses))]
        if xi_hat != 0.0:
            pen = np.concatenate(
                [lam * (1 - xi_hat) + xi_hat * pair_pi, np.zeros(d.m)])
            fit = ws.fit_at(pen, opts.tol, opts.max_sweeps)
    t, tk = _pair_scores(design, fit.coef, 0, 1)
    return ScoreEntry(t, tk, len(rows), False)


def batch_scores(d: DataBundle, cloaked: DataBundle, partition: PartitionSet,
                 batches: Sequence[Sequence[int]], seed: int,
                 cfg: ScoreConfig = ScoreConfig(),
                 scope: Optional[Sequence[int]] = None) -> ScoreTable:
    """One shared lasso per (batch, subgroup); no prior weights.

    Each batch must hold variables with identical subgroup rules. The
    design reveals all of the batch's pairs at once, with the remaining
    in-scope variables entering through the cloaked view, so the number of
    fitted models is the sum of batch widths instead of the hypothesis
    count.
    """
    if scope is None:
        scope = range(d.p)
    scope = sorted(int(v) for v in scope)
    table = ScoreTable()
    opts = cfg.opts
    for batch in batches:
        batch = sorted(int(v) for v in batch)
        rule = partition.rules[batch[0]]
        for j in batch:
            if partition.rules[j] != rule:
                raise ValueError(
                    f"batch {batch} mixes different subgroup rules")
        width = partition.width(batch[0])
        others = np.array([v for v in scope if v not in set(batch)],
                          dtype=int)
        for label in range(1, width + 1):
            rows = subgroup_members(partition, batch[0], label, d.z)
            if len(rows) < cfg.min_subgroup:
                for j in batch:
                    table.entries[HypothesisId(j, label)] = ScoreEntry(
                        0.0, 0.0, len(rows), True)
                continue
            raw = np.hstack([
                d.x[rows][:, batch],
                d.xk[rows][:, batch],
                cloaked.x[rows][:, others],
                cloaked.xk[rows][:, others],
                cloaked.z[rows],
            ])
            design = standardize(raw)
            n_cols = 2 * (len(batch) + len(others))
            factors = np.concatenate([np.ones(n_cols), np.zeros(d.m)])
            entry_seed = derive_seed(seed, "scores", batch[0], label)
            _, fit = lasso_cv(design, d.y[rows], factors,
                              folds=opts.cv_folds, grid_size=opts.grid_size,
                              grid_ratio=opts.grid_ratio, seed=entry_seed,
                              tol=opts.tol, cv_tol=opts.cv_tol,
                              max_sweeps=opts.max_sweeps,
                              path_patience=opts.path_patience)
            table.models_fitted += 1
            for pos, j in enumerate(batch):
                t, tk = _pair_scores(design, fit.coef, pos,
                                     pos + len(batch))
                table.entries[HypothesisId(j, label)] = ScoreEntry(
                    t, tk, len(rows), False)
    return table


def compute_score_table(d: DataBundle, cloaked: DataBundle,
                        partition: PartitionSet, cfg: ScoreConfig,
                        seed: int,
                        variables: Optional[Sequence[int]] = None) -> ScoreTable:
    """Full score table over ``variables`` (default: all) via the configured path."""
    if variables is None:
        variables = range(d.p)
    variables = sorted(int(v) for v in variables)
    if cfg.path == "batch":
        batches = group_batches(partition, variables)
        return batch_scores(d, cloaked, partition, batches, seed, cfg,
                            scope=variables)
    prior = None
    if cfg.use_prior:
        prior = prior_weights(cloaked, cfg.zeta_offset,
                              derive_seed(seed, "prior"), cfg.opts)
    table = ScoreTable()
    for j in variables:
        for label in range(1, partition.width(j) + 1):
            entry_seed = derive_seed(seed, "scores", j, label)
            entry = local_score_pair(d, cloaked, partition, j, label, prior,
                                     entry_seed, cfg, scope=variables)
            table.entries[HypothesisId(j, label)] = entry
            if not entry.skipped:
                table.models_fitted += 1
    return table


def block_aggregate(table: ScoreTable, blocks: BlockMap,
                    partition: PartitionSet,
                    subset: Optional[Sequence[int]] = None) -> ScoreTable:
    """Sum score pairs over each block's variables, per subgroup.

    Every variable in a block must share the block's subgroup rule. The
    result is keyed by (block index, label). ``subset`` restricts to the
    listed block indices (used when only some blocks were scored).
    """
    out = ScoreTable(models_fitted=table.models_fitted)
    block_range = range(blocks.n_blocks) if subset is None else subset
    for b in block_range:
        members = blocks.members(b)
        rule = partition.rules[members[0]]
        for j in members:
            if partition.rules[j] != rule:
                raise ValueError(
                    f"block {b} mixes different subgroup rules")
        width = partition.width(members[0])
        for label in range(1, width + 1):
            entries = [table[(j, label)] for j in members]
            skipped = all(e.skipped for e in entries)
            out.entries[HypothesisId(b, label)] = ScoreEntry(
                sum(e.t for e in entries), sum(e.tk for e in entries),
                max(e.n_rows for e in entries), skipped)
    return out

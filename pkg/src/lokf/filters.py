"""Test statistics, the adaptive rejection threshold, and method drivers.

`knockoff_threshold` implements the knockoff+ form of the selective
sequential step-up rule: the smallest statistic magnitude ``t`` with
``(1 + #{w <= -t}) / max(1, #{w >= t}) <= alpha`` becomes the threshold,
and every hypothesis with ``w >= t`` is rejected. Zero statistics count on
neither side, so skipped subgroups can never be rejected.

The drivers compose the pipeline in different ways:

* ``lkf_fixed``  - scores and threshold for a given partition and cloak;
* ``alkf``       - draw a cloak, learn the partition from the cloaked view
                   only, then run ``lkf_fixed`` with the same cloak;
* ``global_kf``  - one whole-sample model, population-level hypotheses;
* ``split_lkf``  - learn the partition on one half of the rows, test on
                   the other half (valid but sample-hungry);
* ``naive_lkf``  - learn and test on the same uncloaked data (biased;
                   kept as a benchmark);
* ``fixed_lkf``  - pre-defined covariate environments, one whole-pair
                   model per environment, no cloaking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import (BlockMap, CloakMask, DataBundle, HypothesisId,
                   PartitionSet, cloak_swap)
from .lasso import FitOptions
from .partition import PartitionConfig, learn_partition, prescreen
from .rng import derive_rng, derive_seed
from .scores import (ScoreConfig, ScoreTable, block_aggregate,
                     compute_score_table)


@dataclass(frozen=True)
class StatVector:
    """Anti-symmetric statistics ``w = t - tk`` in hypothesis order."""

    ids: tuple
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "ids", tuple(self.ids))

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class DiscoverySet:
    """Rejected hypotheses plus the threshold bookkeeping behind them."""

    rejected: tuple
    threshold: float
    fdp_estimate: float
    alpha: float
    stats: StatVector
    partition: Optional[PartitionSet] = None
    blocks: Optional[BlockMap] = None
    rows: Optional[np.ndarray] = None

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def assemble_w(table: ScoreTable) -> StatVector:
    """Entry-wise difference of the score pairs; swap of (t, tk) negates w."""
    ids = []
    w = []
    for hid, e in table.items():
        ids.append(hid)
        w.append(e.t - e.tk)
    return StatVector(tuple(ids), np.array(w, dtype=float))


def knockoff_threshold(stats: StatVector, alpha: float, **attach) -> DiscoverySet:
    """Adaptive threshold at level ``alpha``; rejects ``{w >= t}``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    w = stats.w
    nonzero = np.abs(w[w != 0])
    threshold = np.inf
    fdp_est = 0.0
    for t in np.unique(nonzero):
        ratio = (1 + np.sum(w <= -t)) / max(1, np.sum(w >= t))
        if ratio <= alpha:
            threshold = float(t)
            fdp_est = float(ratio)
            break
    if np.isinf(threshold):
        rejected = ()
    else:
        rejected = tuple(hid for hid, wi in zip(stats.ids, w)
                         if wi >= threshold)
    return DiscoverySet(rejected, threshold, fdp_est, float(alpha), stats,
                        **attach)


@dataclass(frozen=True)
class LkfConfig:
    """Bundle of pipeline settings shared by the method drivers."""

    partition: PartitionConfig = field(default_factory=PartitionConfig)
    scores: ScoreConfig = field(default_factory=ScoreConfig)
    binary_covariates: Optional[tuple] = None
    cloak_prob: float = 0.5
    blocks: Optional[BlockMap] = None

    def resolve_binary(self, d: DataBundle) -> np.ndarray:
        if self.binary_covariates is not None:
            return np.asarray(self.binary_covariates, dtype=int)
        return d.binary_covariates()


def _draw_mask(d: DataBundle, cfg: LkfConfig, seed: int) -> CloakMask:
    if cfg.blocks is not None:
        return CloakMask.draw_blocks(d.n, cfg.blocks, cfg.cloak_prob, seed)
    return CloakMask.draw(d.n, d.p, cfg.cloak_prob, seed)


def _tested_variables(cloaked: DataBundle, cfg: LkfConfig, part_seed: int):
    """Pre-screened scope (whole blocks when block inference is on)."""
    if not cfg.partition.prescreen:
        return None, None
    screened = prescreen(cloaked, part_seed, opts=cfg.scores.opts)
    if cfg.blocks is None:
        return screened, screened
    hit = np.unique(cfg.blocks.block_of[screened])
    tested = np.concatenate([cfg.blocks.members(b) for b in hit]) \
        if hit.size else np.array([], dtype=int)
    return screened, np.sort(tested)


def _block_partition(partition: PartitionSet, blocks: BlockMap) -> PartitionSet:
    return PartitionSet(tuple(partition.rules[blocks.members(b)[0]]
                              for b in range(blocks.n_blocks)))


def lkf_fixed(d: DataBundle, mask: CloakMask, partition: PartitionSet,
              alpha: float, cfg: LkfConfig, seed: int,
              variables: Optional[Sequence[int]] = None) -> DiscoverySet:
    """Score the local hypotheses of a fixed partition and apply the filter."""
    cloaked = cloak_swap(d, mask)
    if variables is not None and len(variables) == 0:
        empty = StatVector((), np.array([]))
        return DiscoverySet((), np.inf, 0.0, float(alpha), empty,
                            partition=partition, blocks=cfg.blocks)
    table = compute_score_table(d, cloaked, partition, cfg.scores, seed,
                                variables)
    if cfg.blocks is not None:
        subset = None
        if variables is not None:
            tested = set(int(v) for v in variables)
            subset = [b for b in range(cfg.blocks.n_blocks)
                      if set(map(int, cfg.blocks.members(b))) <= tested]
        table = block_aggregate(table, cfg.blocks, partition, subset=subset)
        snapshot = _block_partition(partition, cfg.blocks)
    else:
        snapshot = partition
    return knockoff_threshold(assemble_w(table), alpha, partition=snapshot,
                              blocks=cfg.blocks)


def alkf(d: DataBundle, alpha: float, cfg: LkfConfig, seed: int):
    """Adaptive pipeline: cloak, learn the partition cloaked-only, test.

    Returns the learned partition and the discovery set.
    """
    mask = _draw_mask(d, cfg, derive_seed(seed, "cloak"))
    cloaked = cloak_swap(d, mask)
    part_seed = derive_seed(seed, "partition")
    screened, tested = _tested_variables(cloaked, cfg, part_seed)
    learned = learn_partition(cloaked, cfg.resolve_binary(d), cfg.partition,
                              part_seed, blocks=cfg.blocks,
                              opts=cfg.scores.opts, screened=screened)
    disc = lkf_fixed(d, mask, learned, alpha, cfg,
                     derive_seed(seed, "test"), variables=tested)
    return learned, disc


def fixed_lkf(d: DataBundle, env_covariates: Sequence[int], alpha: float,
              seed: int, opts: FitOptions = FitOptions(),
              min_subgroup: int = 30) -> DiscoverySet:
    """Pre-defined environments, one whole-sample-pair model per environment.

    No cloaking: each environment's model is a population-level fit
    restricted to that environment's rows. With no environment covariates
    this is exactly the population-level filter.
    """
    part = PartitionSet.uniform(d.p, tuple(int(c) for c in env_covariates))
    cfg = LkfConfig(
        scores=ScoreConfig(path="batch", use_prior=False,
                           min_subgroup=min_subgroup, opts=opts))
    return lkf_fixed(d, CloakMask.zeros(d.n, d.p), part, alpha, cfg, seed)


def global_kf(d: DataBundle, alpha: float, seed: int,
              opts: FitOptions = FitOptions()) -> DiscoverySet:
    """Population-level knockoff filter: one model, one hypothesis per variable."""
    return fixed_lkf(d, (), alpha, seed, opts=opts)


def split_lkf(d: DataBundle, alpha: float, cfg: LkfConfig,
              seed: int) -> DiscoverySet:
    """Learn the partition on half the rows, test on the other half.

    The halves are disjoint, so the learning half is used as-is (no cloak
    needed); the testing half gets a fresh cloak for score computation.
    """
    perm = derive_rng(seed, "split").permutation(d.n)
    half = d.n // 2
    rows_learn = np.sort(perm[:half])
    rows_test = np.sort(perm[half:])
    d_learn = d.take(rows_learn)
    d_test = d.take(rows_test)
    part_seed = derive_seed(seed, "partition")
    screened, tested = _tested_variables(d_learn, cfg, part_seed)
    learned = learn_partition(d_learn, cfg.resolve_binary(d), cfg.partition,
                              part_seed, blocks=cfg.blocks,
                              opts=cfg.scores.opts, screened=screened)
    mask = _draw_mask(d_test, cfg, derive_seed(seed, "cloak"))
    disc = lkf_fixed(d_test, mask, learned, alpha, cfg,
                     derive_seed(seed, "test"), variables=tested)
    return replace(disc, rows=rows_test)


def naive_lkf(d: DataBundle, alpha: float, cfg: LkfConfig,
              seed: int) -> DiscoverySet:
    """Learn and test on the same rows without cloaking (selection-biased).

    Both the partition learner and the complement columns of every score
    model see the raw variable/knockoff identities.
    """
    part_seed = derive_seed(seed, "partition")
    screened, tested = _tested_variables(d, cfg, part_seed)
    learned = learn_partition(d, cfg.resolve_binary(d), cfg.partition,
                              part_seed, blocks=cfg.blocks,
                              opts=cfg.scores.opts, screened=screened)
    disc = lkf_fixed(d, CloakMask.zeros(d.n, d.p), learned, alpha, cfg,
                     derive_seed(seed, "test"), variables=tested)
    return disc


def write_discoveries_csv(disc: DiscoverySet, path) -> None:
    """One row per rejected hypothesis, 1-based variable/block naming."""
    w_of = dict(zip(disc.stats.ids, disc.stats.w))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "block", "subgroup_label",
                         "subgroup_definition", "w", "threshold", "alpha"])
        for hid in disc.rejected:
            if disc.blocks is not None:
                block = str(hid.variable + 1)
                variable = str(int(disc.blocks.members(hid.variable)[0]) + 1)
            else:
                block = ""
                variable = str(hid.variable + 1)
            definition = (disc.partition.subgroup_definition(hid.variable,
                                                             hid.label)
                          if disc.partition is not None else "")
            writer.writerow([variable, block, hid.label, definition,
                             repr(float(w_of[hid])), repr(disc.threshold),
                             repr(disc.alpha)])

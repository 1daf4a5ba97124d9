"""Learning subgroup rules from the cloaked data only.

The partition learner fits one lasso with variable-by-covariate interaction
terms to the cloaked view of the data and, per variable, keeps the (at
most ``g_max``) binary covariates whose interaction coefficients are
strongest. Because only the cloaked view enters, the learned rules are
unchanged under any swap of variables and knockoffs consistent with the
same cloak, which is what makes the subsequent tests valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import BlockMap, DataBundle, PartitionSet
from .lasso import (FitOptions, interaction_columns, interaction_position,
                    lasso_cv, lasso_fit, standardize)
from .rng import derive_rng, derive_seed


@dataclass(frozen=True)
class PartitionConfig:
    """Knobs of the interaction-lasso partition learner.

    ``c_main`` scales the penalty on main effects of the variable/knockoff
    columns relative to interaction terms; values below 1 make interactions
    comparatively more expensive and so favor coarser partitions. Covariate
    main effects are never penalized.
    """

    g_max: int = 2
    c_main: float = 0.25
    prescreen: bool = False
    tie_seed: Optional[int] = None

    def __post_init__(self):
        if self.g_max < 0:
            raise ValueError("g_max must be non-negative")
        if not 0 < self.c_main <= 1:
            raise ValueError("c_main must lie in (0, 1]")


def _pair_design(bundle: DataBundle):
    """Standardized ``[x | xk | z]`` block with penalty factors 1/1/0."""
    raw = np.hstack([bundle.x, bundle.xk, bundle.z])
    design = standardize(raw)
    factors = np.concatenate(
        [np.ones(2 * bundle.p), np.zeros(bundle.m)]
    )
    return design, factors


def prescreen(cloaked: DataBundle, seed: int, *, lam: Optional[float] = None,
              opts: FitOptions = FitOptions()) -> np.ndarray:
    """Variables whose cloaked pair keeps any weight in a lasso for y.

    Returns the sorted indices ``j`` with ``|b_j| + |b_{j+p}| > 0`` in a
    cross-validated fit of y on ``[x | xk | z]`` (covariates unpenalized).
    Passing ``lam`` skips the cross-validation and fits at that penalty.
    """
    design, factors = _pair_design(cloaked)
    if lam is not None:
        fit = lasso_fit(design, cloaked.y, lam, factors, tol=opts.tol,
                        max_sweeps=opts.max_sweeps)
    else:
        _, fit = lasso_cv(design, cloaked.y, factors, folds=opts.cv_folds,
                          grid_size=opts.grid_size,
                          grid_ratio=opts.grid_ratio,
                          seed=derive_seed(seed, "prescreen"),
                          tol=opts.tol, cv_tol=opts.cv_tol,
                          max_sweeps=opts.max_sweeps,
                          path_patience=opts.path_patience)
    p = cloaked.p
    weight = np.abs(fit.coef[:p]) + np.abs(fit.coef[p:2 * p])
    return np.flatnonzero(weight > 0)


def _top_covariates(strength: np.ndarray, candidates: np.ndarray, g_max: int,
                    tie_rng) -> tuple:
    """Strongest nonzero interaction covariates, ties broken at random."""
    eligible = strength > 0
    if g_max == 0 or not eligible.any():
        return ()
    tie = tie_rng.random(len(strength))
    order = np.lexsort((tie, -strength))
    picked = [candidates[l] for l in order if eligible[l]][:g_max]
    return tuple(sorted(int(c) for c in picked))


def learn_partition(cloaked: DataBundle, binary_covariates: Sequence[int],
                    cfg: PartitionConfig, seed: int, *,
                    blocks: Optional[BlockMap] = None,
                    opts: FitOptions = FitOptions(),
                    screened: Optional[np.ndarray] = None) -> PartitionSet:
    """Data-driven per-variable subgroup rules from the cloaked bundle.

    Output is a function of (cloaked bundle, cfg, seed) only. With a block
    map, interaction strengths are pooled within each block and all of the
    block's variables share the resulting rule. A caller that has already
    pre-screened (with the same seed) can pass the result to avoid a
    duplicate fit.
    """
    p = cloaked.p
    candidates = np.asarray(binary_covariates, dtype=int)
    if screened is None:
        screened = prescreen(cloaked, seed, opts=opts) if cfg.prescreen \
            else np.arange(p)
    if cfg.g_max == 0 or candidates.size == 0 or screened.size == 0:
        return PartitionSet.trivial(p)

    xc = np.hstack([cloaked.x[:, screened], cloaked.xk[:, screened]])
    z_bin = cloaked.z[:, candidates]
    raw, _ = interaction_columns(xc, z_bin)
    other = np.setdiff1d(np.arange(cloaked.m), candidates)
    if other.size:
        raw = np.hstack([raw, cloaked.z[:, other]])
    design = standardize(raw)

    q = 2 * screened.size
    m_bin = candidates.size
    factors = np.concatenate([
        np.full(q, cfg.c_main),        # variable/knockoff main effects
        np.zeros(m_bin),               # covariate main effects
        np.ones(q * m_bin),            # interaction terms
        np.zeros(other.size),
    ])
    _, fit = lasso_cv(design, cloaked.y, factors, folds=opts.cv_folds,
                      grid_size=opts.grid_size, grid_ratio=opts.grid_ratio,
                      seed=derive_seed(seed, "partition-cv"),
                      tol=opts.tol, cv_tol=opts.cv_tol,
                      max_sweeps=opts.max_sweeps,
                      path_patience=opts.path_patience)

    tie_seed = cfg.tie_seed if cfg.tie_seed is not None else derive_seed(
        seed, "partition-ties")
    strengths = np.zeros((screened.size, m_bin))
    for k in range(screened.size):
        for l in range(m_bin):
            ix = interaction_position(q, m_bin, k, l)
            ixk = interaction_position(q, m_bin, k + screened.size, l)
            strengths[k, l] = abs(fit.coef[ix]) + abs(fit.coef[ixk])

    rules = [()] * p
    if blocks is None:
        for k, j in enumerate(screened):
            rng = derive_rng(tie_seed, "ties", int(j))
            rules[j] = _top_covariates(strengths[k], candidates, cfg.g_max,
                                       rng)
    else:
        if blocks.p != p:
            raise ValueError("block map does not cover the variable set")
        pos_of = {int(j): k for k, j in enumerate(screened)}
        for b in range(blocks.n_blocks):
            inside = [pos_of[j] for j in blocks.members(b) if j in pos_of]
            if not inside:
                continue
            pooled = strengths[inside].sum(axis=0)
            rng = derive_rng(tie_seed, "block-ties", b)
            rule = _top_covariates(pooled, candidates, cfg.g_max, rng)
            for j in blocks.members(b):
                rules[j] = rule
    return PartitionSet(tuple(rules))


def group_batches(partition: PartitionSet, variables=None) -> list:
    """Group variables whose subgroup rules are identical.

    Returns a list of sorted index lists; batches are ordered by their
    first variable. Membership is an equivalence relation, so the batches
    partition the variable set.
    """
    if variables is None:
        variables = range(partition.p)
    groups = {}
    for j in sorted(int(v) for v in variables):
        groups.setdefault(partition.rules[j], []).append(j)
    return sorted(groups.values(), key=lambda batch: batch[0])

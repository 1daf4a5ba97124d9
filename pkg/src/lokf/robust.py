"""Variable-level tests for associations replicated across subgroups.

Starting from the per-subgroup statistics of the adaptive pipeline, each
variable gets a randomized sign-based p-value for the claim "associated in
at least r of its subgroups", plus an ordering key (the product of its r
largest statistic magnitudes). A sequential step-up pass over the p-values
in key order then controls the FDR for those claims. Because a variable
survives only if it shows signal in many subgroups, the resulting
discoveries are robust to covariate shift.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import DataBundle, PartitionSet, cloak_swap
from .filters import LkfConfig, _draw_mask, _tested_variables, assemble_w
from .partition import learn_partition
from .rng import derive_rng, derive_seed
from .scores import compute_score_table

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class PcConfig:
    """Replication requirement and sequential-test cutoff.

    ``r_rule`` is either an integer (the same requirement for every
    variable) or the string ``"full"`` (require association in all of a
    variable's subgroups, ``r_j`` equal to the learned width).
    """

    r_rule: object = "full"
    seqstep_c: float = 0.5

    def __post_init__(self):
        if not 0 < self.seqstep_c < 1:
            raise ValueError("seqstep_c must lie in (0, 1)")
        if self.r_rule != "full":
            r = int(self.r_rule)
            if r < 1:
                raise ValueError("fixed r must be at least 1")


def binom_cdf(k: int, m: int, pi: float) -> float:
    """P(Binomial(m, pi) <= k) by direct log-pmf summation.

    ``k < 0`` gives 0 and ``k >= m`` gives 1; ``m = 0`` is the point mass
    at zero.
    """
    if not 0 <= pi <= 1:
        raise ValueError("pi must lie in [0, 1]")
    if m < 0:
        raise ValueError("m must be non-negative")
    if k < 0:
        return 0.0
    if k >= m:
        return 1.0
    total = 0.0
    for i in range(int(k) + 1):
        total += binom_pmf(i, m, pi)
    return min(total, 1.0)


def binom_pmf(k: int, m: int, pi: float) -> float:
    """Binomial point mass, exact at the boundary probabilities."""
    if k < 0 or k > m:
        return 0.0
    if pi == 0.0:
        return 1.0 if k == 0 else 0.0
    if pi == 1.0:
        return 1.0 if k == m else 0.0
    logp = (math.lgamma(m + 1) - math.lgamma(k + 1) - math.lgamma(m - k + 1)
            + k * math.log(pi) + (m - k) * math.log1p(-pi))
    return math.exp(logp)


def pc_pvalue(w_row: Sequence[float], r: int, u: float) -> float:
    """Randomized sign-based p-value for replication in at least ``r`` subgroups.

    With ``n_minus`` strictly negative and ``n_zero`` zero entries out of
    ``len(w_row)``, the p-value is the randomized binomial tail
    ``F(n_minus - 1) + u * f(n_minus)`` at success probability 1/2 over
    ``max(L - r + 1 - n_zero, 0)`` trials, clipped into (0, 1].
    """
    w_row = np.asarray(w_row, dtype=float)
    l0 = len(w_row)
    if not 1 <= r <= l0:
        raise ValueError(f"r must lie in [1, {l0}], got {r}")
    if not 0 <= u <= 1:
        raise ValueError("u must lie in [0, 1]")
    n_minus = int(np.sum(w_row < 0))
    n_zero = int(np.sum(w_row == 0))
    m = max(l0 - r + 1 - n_zero, 0)
    p = binom_cdf(n_minus - 1, m, 0.5) + u * binom_pmf(n_minus, m, 0.5)
    return float(min(max(p, _TINY), 1.0))


def pc_order(w_row: Sequence[float], r: int) -> float:
    """Product of the ``r`` largest entries of ``|w_row|``.

    Invariant under permutations and sign flips of the row.
    """
    w_row = np.asarray(w_row, dtype=float)
    if not 1 <= r <= len(w_row):
        raise ValueError(f"r must lie in [1, {len(w_row)}], got {r}")
    top = np.sort(np.abs(w_row))[-r:]
    return float(np.prod(top))


def seqstep_pvalues(pvals: Sequence[float], order_keys: Sequence[float],
                    alpha: float, c: float = 0.5) -> np.ndarray:
    """Sequential step-up over p-values sorted by decreasing key.

    Finds the largest prefix length k with
    ``(1 + #{i <= k: p_i > c}) / max(1, #{i <= k: p_i <= c})
    <= alpha * (1 - c) / c`` and rejects the prefix entries with
    ``p_i <= c``. Returns sorted original indices (empty if no k works).
    """
    pvals = np.asarray(pvals, dtype=float)
    keys = np.asarray(order_keys, dtype=float)
    if pvals.shape != keys.shape:
        raise ValueError("pvals and order_keys must have equal length")
    if not 0 < alpha < 1 or not 0 < c < 1:
        raise ValueError("alpha and c must lie in (0, 1)")
    n = len(pvals)
    order = np.lexsort((np.arange(n), -keys))
    sorted_p = pvals[order]
    above = np.cumsum(sorted_p > c)
    below = np.cumsum(sorted_p <= c)
    ratio = (1 + above) / np.maximum(1, below)
    ok = np.flatnonzero(ratio <= alpha * (1 - c) / c)
    if ok.size == 0:
        return np.array([], dtype=int)
    k = int(ok[-1]) + 1
    rejected = order[:k][sorted_p[:k] <= c]
    return np.sort(rejected)


@dataclass(frozen=True)
class RobustDiscoverySet:
    """Variable-level rejections with their replication requirements."""

    rejected: tuple
    alpha: float
    p_values: np.ndarray
    order_keys: np.ndarray
    r_values: np.ndarray
    partition: Optional[PartitionSet] = None
    rows: Optional[np.ndarray] = None

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def pc_from_stats(ids, w, widths: np.ndarray, cfg: PcConfig, seed: int,
                  variables: Optional[Sequence[int]] = None):
    """Pad per-variable statistic rows to common width; compute (p, key, r)."""
    if variables is None:
        variables = sorted({hid.variable for hid in ids})
    variables = list(variables)
    l0 = max((int(widths[j]) for j in variables), default=1)
    by_var = {j: np.zeros(l0) for j in variables}
    for hid, wi in zip(ids, w):
        by_var[hid.variable][hid.label - 1] = wi
    pvals, keys, rs = [], [], []
    for j in variables:
        if cfg.r_rule == "full":
            r = max(int(widths[j]), 1)
        else:
            r = int(cfg.r_rule)
            if r > l0:
                raise ValueError(
                    f"fixed r={r} exceeds the common width {l0}")
        u = float(derive_rng(seed, "pc-u", j).random())
        pvals.append(pc_pvalue(by_var[j], r, u))
        keys.append(pc_order(by_var[j], r))
        rs.append(r)
    return (np.array(variables), np.array(pvals), np.array(keys),
            np.array(rs, dtype=int))


def robust_alkf(d: DataBundle, alpha: float, cfg: LkfConfig, pc: PcConfig,
                seed: int):
    """Adaptive pipeline up to the statistics, then the replication test.

    Returns the learned partition and a variable-level discovery set.
    """
    mask = _draw_mask(d, cfg, derive_seed(seed, "cloak"))
    cloaked = cloak_swap(d, mask)
    part_seed = derive_seed(seed, "partition")
    screened, tested = _tested_variables(cloaked, cfg, part_seed)
    learned = learn_partition(cloaked, cfg.resolve_binary(d), cfg.partition,
                              part_seed, blocks=cfg.blocks,
                              opts=cfg.scores.opts, screened=screened)
    table = compute_score_table(d, cloaked, learned, cfg.scores,
                                derive_seed(seed, "test"), tested)
    stats = assemble_w(table)
    variables, pvals, keys, rs = pc_from_stats(
        stats.ids, stats.w, learned.widths, pc, derive_seed(seed, "pc"),
        tested)
    picked = seqstep_pvalues(pvals, keys, alpha, pc.seqstep_c)
    rejected = tuple(int(variables[i]) for i in picked)
    return learned, RobustDiscoverySet(rejected, float(alpha), pvals, keys,
                                       rs, partition=learned)


def write_robust_csv(disc: RobustDiscoverySet, variables: np.ndarray,
                     path) -> None:
    """Rejected variables with their replication level and p-value."""
    index = {int(v): i for i, v in enumerate(variables)}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "block", "subgroup_label",
                         "subgroup_definition", "w", "threshold", "alpha",
                         "r", "p_value"])
        for j in disc.rejected:
            i = index[j]
            writer.writerow([j + 1, "", "", "all",
                             repr(float(disc.order_keys[i])), "",
                             repr(disc.alpha), int(disc.r_values[i]),
                             repr(float(disc.p_values[i]))])

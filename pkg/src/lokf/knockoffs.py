"""Exact knockoffs for conditionally independent Bernoulli variables.

The synthetic model used throughout the simulations draws each variable
independently as ``X_j | Z ~ Bernoulli(z[:, prob_index[j]])``. A knockoff
copy drawn fresh from the same conditional is exchangeable with the
original by construction. Externally constructed knockoffs for other
distributions can be supplied through the dataset interface; everything
downstream only needs the augmented bundle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .rng import derive_rng


@dataclass(frozen=True)
class CondBernoulliModel:
    """``X_j | Z ~ Bernoulli(Z[:, prob_index[j]])``, independently over j."""

    prob_index: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.prob_index, dtype=int)
        idx.setflags(write=False)
        object.__setattr__(self, "prob_index", idx)

    @property
    def p(self) -> int:
        return len(self.prob_index)

    def probabilities(self, z: np.ndarray) -> np.ndarray:
        probs = np.asarray(z, dtype=float)[:, self.prob_index]
        if (probs < 0).any() or (probs > 1).any():
            raise ValueError("Bernoulli probabilities must lie in [0, 1]")
        return probs


def gen_bernoulli_knockoffs(z: np.ndarray, model: CondBernoulliModel,
                            seed: int = 0) -> np.ndarray:
    """Sample an independent copy of each variable from its conditional law."""
    probs = model.probabilities(z)
    rng = derive_rng(seed, "bernoulli-knockoffs")
    return (rng.random(probs.shape) < probs).astype(float)


@dataclass(frozen=True)
class DiagnosticResult:
    """Pooled swap-symmetry test for one variable/knockoff pair."""

    statistic: float
    df: int
    p_value: float
    n_bins: int
    skipped_bins: int


def exchangeability_diagnostic(x: np.ndarray, xk: np.ndarray, z: np.ndarray,
                               j: int, cond_index=None,
                               bins: int = 10) -> DiagnosticResult:
    """Test whether ``(X_j, Xk_j)`` looks exchangeable conditional on ``Z``.

    Within each conditioning bin, rows where the pair is discordant are
    split into ``x > xk`` and ``x < xk``; under exchangeability the two
    counts are symmetric, giving a 1-df chi-square contribution per bin
    (the 2x2 contingency table with the swapped cells pooled). Bin
    statistics are summed and referred to a chi-square with one degree of
    freedom per contributing bin.

    ``cond_index`` picks the covariate column to condition on (``None``
    pools all rows into one bin). Binary conditioning columns use their
    exact values as bins; continuous ones are cut at deciles (or ``bins``
    quantiles). Bins without rows are skipped and counted.
    """
    x = np.asarray(x, dtype=float)
    xk = np.asarray(xk, dtype=float)
    if not 0 <= j < x.shape[1]:
        raise IndexError(f"column {j} out of range [0, {x.shape[1]})")
    a = x[:, j]
    b = xk[:, j]
    n = len(a)
    if cond_index is None:
        groups = [np.arange(n)]
    else:
        v = np.asarray(z, dtype=float)[:, cond_index]
        if np.isin(v, (0.0, 1.0)).all():
            groups = [np.flatnonzero(v == 0.0), np.flatnonzero(v == 1.0)]
        else:
            edges = np.unique(np.quantile(v, np.linspace(0, 1, bins + 1)))
            if len(edges) < 2:
                groups = [np.arange(n)]
            else:
                cut = np.searchsorted(edges[1:-1], v, side="right")
                groups = [np.flatnonzero(cut == g)
                          for g in range(len(edges) - 1)]
    stat = 0.0
    df = 0
    skipped = 0
    for rows in groups:
        if len(rows) == 0:
            skipped += 1
            continue
        hi = int(np.sum(a[rows] > b[rows]))
        lo = int(np.sum(a[rows] < b[rows]))
        if hi + lo == 0:
            continue
        stat += (hi - lo) ** 2 / (hi + lo)
        df += 1
    p = float(chi2.sf(stat, df)) if df > 0 else 1.0
    return DiagnosticResult(float(stat), df, p, len(groups) - skipped, skipped)

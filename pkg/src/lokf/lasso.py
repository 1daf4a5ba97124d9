"""Weighted-penalty lasso via cyclic coordinate descent.

Solves ``(1/2n) ||y - X beta - b0||^2 + lam * sum_k factor_k |beta_k|`` on a
standardized design, with per-feature penalty factors (factor 0 leaves a
column unpenalized). This is the engine behind every importance score and
partition-learning fit in the package, so determinism is part of the
contract: a fixed cyclic coordinate order plus active-set sweeps, seeded
fold assignments that depend only on ``(seed, n)``, and a tie-free
cross-validation selection rule.

Unpenalized columns are partialled out: the penalized columns and the
outcome are projected onto the orthocomplement of the unpenalized block,
coordinate descent runs on the projected problem, and the unpenalized
coefficients are recovered by least squares afterwards. The optimality
conditions of the joint problem are preserved exactly, and the iteration
stays small and well-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .rng import derive_rng

DEFAULT_TOL = 1e-7
DEFAULT_CV_TOL = 1e-4
DEFAULT_MAX_SWEEPS = 100_000
DEFAULT_GRID_SIZE = 50
DEFAULT_GRID_RATIO = 1e-3
DEFAULT_PATH_PATIENCE = 10


@dataclass(frozen=True)
class FitOptions:
    """Shared cross-validation and solver settings.

    ``cv_tol`` governs the fold-path fits whose only output is a
    validation loss; any fit whose coefficients are read uses the strict
    ``tol``. ``path_patience`` stops the cross-validation path once the
    mean validation loss has not improved for that many grid points (0
    disables the stop); unevaluated grid points carry NaN losses.
    """

    cv_folds: int = 5
    grid_size: int = DEFAULT_GRID_SIZE
    grid_ratio: float = DEFAULT_GRID_RATIO
    tol: float = DEFAULT_TOL
    cv_tol: float = DEFAULT_CV_TOL
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    path_patience: int = DEFAULT_PATH_PATIENCE


@dataclass(frozen=True)
class DesignMatrix:
    """Column-standardized design with the scaling maps back to raw units.

    ``values`` has mean 0 and population standard deviation 1 in every
    retained column; constant columns are flagged (``retained`` False),
    zeroed out, and excluded from penalized fitting.
    """

    values: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    retained: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]


def standardize(raw: np.ndarray) -> DesignMatrix:
    """Center and scale each column; flag constant columns as excluded."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("design must be 2-dimensional")
    n = raw.shape[0]
    if n < 2:
        raise ValueError("standardization needs at least 2 rows")
    if not np.isfinite(raw).all():
        raise ValueError("non-finite values in design")
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    retained = scale > 0
    if not retained.any():
        raise ValueError("all columns are constant")
    safe = np.where(retained, scale, 1.0)
    values = (raw - mean) / safe
    values[:, ~retained] = 0.0
    values = np.asfortranarray(values)
    values.setflags(write=False)
    return DesignMatrix(values, mean, np.where(retained, scale, 0.0), retained)


@dataclass(frozen=True)
class LassoFit:
    """Solution of one weighted lasso problem, on the standardized scale."""

    coef: np.ndarray
    intercept: float
    lam: float
    factors: np.ndarray
    converged: bool
    sweeps: int

    def predict(self, values: np.ndarray) -> np.ndarray:
        return self.intercept + values @ self.coef


@dataclass(frozen=True)
class CvResult:
    """Cross-validation trace: loss profile over the penalty grid."""

    lambda_grid: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    selected_lambda: float
    seed: int


@njit(cache=True)
def _cd(X, y, pen, sq, beta, tol, max_sweeps):  # pragma: no cover - jitted
    """Cyclic coordinate descent with active-set refinement.

    ``X`` is Fortran-ordered ``(n, q)``; ``pen`` is the absolute penalty per
    column; ``sq[k]`` is ``<x_k, x_k>/n`` (0 marks an excluded column);
    ``beta`` is the warm start and is updated in place. Convergence means a
    full sweep moved no coordinate by ``tol`` or more.
    """
    n, q = X.shape
    r = y.copy()
    for k in range(q):
        b = beta[k]
        if b != 0.0:
            for i in range(n):
                r[i] -= X[i, k] * b
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        maxd = 0.0
        for k in range(q):
            s = sq[k]
            if s <= 0.0:
                continue
            bo = beta[k]
            z = 0.0
            for i in range(n):
                z += X[i, k] * r[i]
            z = z / n + s * bo
            pk = pen[k]
            if z > pk:
                bn = (z - pk) / s
            elif z < -pk:
                bn = (z + pk) / s
            else:
                bn = 0.0
            d = bn - bo
            if d != 0.0:
                for i in range(n):
                    r[i] -= X[i, k] * d
                beta[k] = bn
                if abs(d) > maxd:
                    maxd = abs(d)
        sweeps += 1
        if maxd < tol:
            converged = True
            break
        # refine on the active set (plus unpenalized columns) until stable
        while sweeps < max_sweeps:
            maxd = 0.0
            for k in range(q):
                s = sq[k]
                if s <= 0.0:
                    continue
                if beta[k] == 0.0 and pen[k] > 0.0:
                    continue
                bo = beta[k]
                z = 0.0
                for i in range(n):
                    z += X[i, k] * r[i]
                z = z / n + s * bo
                pk = pen[k]
                if z > pk:
                    bn = (z - pk) / s
                elif z < -pk:
                    bn = (z + pk) / s
                else:
                    bn = 0.0
                d = bn - bo
                if d != 0.0:
                    for i in range(n):
                        r[i] -= X[i, k] * d
                    beta[k] = bn
                    if abs(d) > maxd:
                        maxd = abs(d)
            sweeps += 1
            if maxd < tol:
                break
    return r, sweeps, converged


class _Reduced:
    """One fitting context: centered columns, unpenalized block projected out.

    Columns with zero mean square are excluded (their coefficients stay 0);
    columns with positive factor form the coordinate-descent problem after
    projection; factor-0 columns define the projection and are recovered by
    minimum-norm least squares given the penalized part.
    """

    def __init__(self, values: np.ndarray, factors: np.ndarray):
        values = np.asarray(values, dtype=float)
        sq_all = (values ** 2).mean(axis=0)
        self.n, self.q = values.shape
        self.pen_idx = np.flatnonzero((factors > 0) & (sq_all > 0))
        self.unpen_idx = np.flatnonzero((factors == 0) & (sq_all > 0))
        self.pen_factors = np.ascontiguousarray(factors[self.pen_idx])
        self._xp_orig = values[:, self.pen_idx]
        xp = self._xp_orig
        if self.unpen_idx.size:
            # orthonormal basis of the unpenalized block via its Gram
            # matrix (rank-safe, BLAS-bound; cheaper than an SVD of u)
            u = values[:, self.unpen_idx]
            evals, evecs = np.linalg.eigh(u.T @ u)
            top = evals[-1] if evals.size else 0.0
            keep = evals > top * 1e-12 if top > 0 else evals > np.inf
            scaled = evecs[:, keep] / np.sqrt(evals[keep])
            self._basis = np.ascontiguousarray(u @ scaled)
            self._pinv_t = np.ascontiguousarray(scaled.T)
            xp = xp - self._basis @ (self._basis.T @ xp)
        else:
            self._basis = None
            self._pinv_t = None
        self.xp = np.asfortranarray(xp)
        self.sqp = (xp ** 2).mean(axis=0)

    def project(self, y_centered: np.ndarray) -> np.ndarray:
        if self._basis is None:
            return np.ascontiguousarray(y_centered)
        return y_centered - self._basis @ (self._basis.T @ y_centered)

    def solve(self, my: np.ndarray, penalties: np.ndarray,
              beta_p: np.ndarray, tol: float, max_sweeps: int):
        if self.pen_idx.size == 0:
            return 0, True
        _, sweeps, converged = _cd(self.xp, my,
                                   np.ascontiguousarray(penalties),
                                   self.sqp, beta_p, tol, max_sweeps)
        return sweeps, converged

    def full_coef(self, y_centered: np.ndarray,
                  beta_p: np.ndarray) -> np.ndarray:
        coef = np.zeros(self.q)
        coef[self.pen_idx] = beta_p
        if self.unpen_idx.size:
            resid = y_centered - self._xp_orig @ beta_p
            coef[self.unpen_idx] = self._pinv_t.T @ (self._basis.T @ resid)
        return coef

    def grad_at_zero(self, my: np.ndarray) -> np.ndarray:
        if self.pen_idx.size == 0:
            return np.zeros(0)
        return self.xp.T @ my / self.n


def _check_fit_inputs(design: DesignMatrix, y: np.ndarray, lam: float,
                      factors: np.ndarray):
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({design.n},)")
    if not np.isfinite(y).all():
        raise ValueError("non-finite values in y")
    factors = np.asarray(factors, dtype=float)
    if factors.shape != (design.q,):
        raise ValueError("factors must have one entry per design column")
    if not np.isfinite(factors).all() or (factors < 0).any():
        raise ValueError("penalty factors must be finite and non-negative")
    if lam < 0 or not np.isfinite(lam):
        raise ValueError("lambda must be finite and non-negative")
    if lam == 0 and factors.any():
        raise ValueError("lambda must be positive unless all factors are zero")
    return y, factors


def lasso_fit(design: DesignMatrix, y: np.ndarray, lam: float,
              factors: np.ndarray, *, beta0: Optional[np.ndarray] = None,
              tol: float = DEFAULT_TOL,
              max_sweeps: int = DEFAULT_MAX_SWEEPS) -> LassoFit:
    """Solve one weighted lasso problem.

    Deterministic for fixed inputs. A non-converged solve (sweep budget
    exhausted) is flagged but still returned.
    """
    y, factors = _check_fit_inputs(design, y, lam, factors)
    intercept = float(y.mean())
    yc = y - intercept
    red = _Reduced(design.values, factors)
    if beta0 is None:
        beta_p = np.zeros(red.pen_idx.size)
    else:
        beta_p = np.array(np.asarray(beta0, dtype=float)[red.pen_idx])
    sweeps, converged = red.solve(red.project(yc), lam * red.pen_factors,
                                  beta_p, tol, max_sweeps)
    return LassoFit(red.full_coef(yc, beta_p), intercept, float(lam),
                    factors, bool(converged), int(sweeps))


def kkt_gradient(design: DesignMatrix, y: np.ndarray,
                 fit: LassoFit) -> np.ndarray:
    """Per-column gradient ``<x_k, residual>/n`` at the fitted solution.

    Optimality requires ``|g_k| <= lam * factor_k`` everywhere, with
    equality (at the sign of the coefficient) on the active set and
    ``g_k ~ 0`` for unpenalized columns.
    """
    resid = np.asarray(y, dtype=float) - fit.predict(design.values)
    return design.values.T @ resid / design.n


def lasso_objective(design: DesignMatrix, y: np.ndarray,
                    fit: LassoFit) -> float:
    resid = np.asarray(y, dtype=float) - fit.predict(design.values)
    return float(
        0.5 * np.mean(resid ** 2)
        + fit.lam * np.sum(fit.factors * np.abs(fit.coef))
    )


def lambda_grid(design: DesignMatrix, y: np.ndarray, factors: np.ndarray,
                grid_size: int = DEFAULT_GRID_SIZE,
                grid_ratio: float = DEFAULT_GRID_RATIO) -> np.ndarray:
    """Log-spaced penalty grid from the smallest all-zero penalty downward.

    With unpenalized columns present, the entry point comes from the
    gradient after those columns alone are fitted.
    """
    y = np.asarray(y, dtype=float)
    factors = np.asarray(factors, dtype=float)
    if not ((factors > 0) & design.retained).any():
        raise ValueError("no penalized columns; a lambda grid is undefined")
    red = _Reduced(design.values, factors)
    my = red.project(y - y.mean())
    grad = red.grad_at_zero(my)
    lam_max = float(np.max(np.abs(grad) / red.pen_factors)) \
        if grad.size else 0.0
    lam_max = max(lam_max, 1e-12)
    if grid_size == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * grid_ratio, grid_size)


def cv_fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Balanced fold assignment from a seeded permutation of row positions.

    A function of ``(seed, n)`` only, never of the data values.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < 2 * folds:
        raise ValueError(f"need n >= {2 * folds} rows for {folds}-fold CV")
    perm = derive_rng(seed, "cv-folds", n).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


class CvWorkspace:
    """Fold contexts shared across repeated penalty evaluations.

    Building a context involves projecting out the unpenalized block, the
    expensive part of a fit; two-stage tuning evaluates many penalty
    vectors with the same penalized/unpenalized column pattern on the same
    folds, so the contexts are built once and reused. Fold membership is a
    function of ``(seed, n)`` only.
    """

    def __init__(self, design: DesignMatrix, y: np.ndarray,
                 factors: np.ndarray, folds: int, seed: int):
        y, factors = _check_fit_inputs(design, y, 1.0, factors)
        self.design = design
        self.y = y
        self.factors = factors
        self.fold_ids = cv_fold_ids(design.n, folds, seed)
        self.seed = seed
        self.intercept = float(y.mean())
        self.yc = y - self.intercept
        self.folds = []
        for f in range(int(self.fold_ids.max()) + 1):
            tr = self.fold_ids != f
            va = ~tr
            mu = design.values[tr].mean(axis=0)
            red = _Reduced(design.values[tr] - mu, factors)
            ytr = y[tr]
            ybar = float(ytr.mean())
            yc = ytr - ybar
            self.folds.append((red, yc, red.project(yc), ybar,
                               design.values[va] - mu, y[va]))
        self.full = _Reduced(design.values, factors)
        self.my = self.full.project(self.yc)

    def lambda_grid(self, grid_size: int, grid_ratio: float) -> np.ndarray:
        if self.full.pen_idx.size == 0:
            raise ValueError(
                "no penalized columns; a lambda grid is undefined")
        grad = self.full.grad_at_zero(self.my)
        lam_max = float(np.max(np.abs(grad) / self.full.pen_factors)) \
            if grad.size else 0.0
        lam_max = max(lam_max, 1e-12)
        if grid_size == 1:
            return np.array([lam_max])
        return np.geomspace(lam_max, lam_max * grid_ratio, grid_size)

    def path_losses(self, grid: np.ndarray, cv_tol: float,
                    max_sweeps: int) -> np.ndarray:
        """Validation MSE per (fold, grid point), warm along the path."""
        losses = np.empty((len(self.folds), len(grid)))
        for f, (red, yc, my, ybar, xva, yva) in enumerate(self.folds):
            beta_p = np.zeros(red.pen_idx.size)
            for gi, lam in enumerate(grid):
                red.solve(my, lam * red.pen_factors, beta_p, cv_tol,
                          max_sweeps)
                coef = red.full_coef(yc, beta_p)
                pred = ybar + xva @ coef
                losses[f, gi] = np.mean((yva - pred) ** 2)
        return losses

    def penalty_loss(self, penalties: np.ndarray, cv_tol: float,
                     max_sweeps: int) -> float:
        """Mean validation MSE of a fixed absolute-penalty vector.

        ``penalties`` is full-length and must be positive exactly on the
        workspace's penalized columns.
        """
        return self.penalty_losses([penalties], cv_tol, max_sweeps)[0]

    def penalty_losses(self, penalty_list, cv_tol: float,
                       max_sweeps: int) -> list:
        """Mean validation MSE for each penalty vector in the list.

        Within every fold the solves warm-start from the previous vector's
        solution, so grouping related penalty vectors (a tuning grid) into
        one call is much cheaper than separate calls.
        """
        totals = [0.0] * len(penalty_list)
        for red, yc, my, ybar, xva, yva in self.folds:
            beta_p = np.zeros(red.pen_idx.size)
            for pi, penalties in enumerate(penalty_list):
                pen = np.asarray(penalties, dtype=float)[red.pen_idx]
                red.solve(my, pen, beta_p, cv_tol, max_sweeps)
                coef = red.full_coef(yc, beta_p)
                pred = ybar + xva @ coef
                totals[pi] += np.mean((yva - pred) ** 2)
        return [t / len(self.folds) for t in totals]

    def fit_at(self, penalties: np.ndarray, tol: float,
               max_sweeps: int) -> LassoFit:
        """Cold full-data fit at an absolute-penalty vector, strict tol."""
        penalties = np.asarray(penalties, dtype=float)
        beta_p = np.zeros(self.full.pen_idx.size)
        _, sweeps, converged = (0, 0, True) if self.full.pen_idx.size == 0 \
            else _cd(self.full.xp, self.my,
                     np.ascontiguousarray(penalties[self.full.pen_idx]),
                     self.full.sqp, beta_p, tol, max_sweeps)
        return LassoFit(self.full.full_coef(self.yc, beta_p),
                        self.intercept, 1.0, penalties, bool(converged),
                        int(sweeps))

    def fit_path(self, grid: np.ndarray, best: int, tol: float,
                 cv_tol: float, max_sweeps: int) -> LassoFit:
        """Full-data fit at ``grid[best]``: loose warm-up, strict finish."""
        beta_p = np.zeros(self.full.pen_idx.size)
        sweeps_total = 0
        for lam in grid[:best]:
            sweeps, _ = self.full.solve(self.my,
                                        lam * self.full.pen_factors,
                                        beta_p, cv_tol, max_sweeps)
            sweeps_total += sweeps
        sweeps, converged = self.full.solve(
            self.my, grid[best] * self.full.pen_factors, beta_p, tol,
            max_sweeps)
        sweeps_total += sweeps
        return LassoFit(self.full.full_coef(self.yc, beta_p),
                        self.intercept, float(grid[best]), self.factors,
                        bool(converged), sweeps_total)

    def cv(self, grid_size: int, grid_ratio: float, tol: float,
           cv_tol: float, max_sweeps: int,
           path_patience: int = DEFAULT_PATH_PATIENCE):
        """Path losses over the grid, grid-major so the early stop can
        watch the mean curve; selection is the first minimizer."""
        grid = self.lambda_grid(grid_size, grid_ratio)
        n_folds = len(self.folds)
        losses = np.full((n_folds, len(grid)), np.nan)
        betas = [np.zeros(red.pen_idx.size) for red, *_ in self.folds]
        best_mean = np.inf
        best = 0
        for gi, lam in enumerate(grid):
            for f, (red, yc, my, ybar, xva, yva) in enumerate(self.folds):
                red.solve(my, lam * red.pen_factors, betas[f], cv_tol,
                          max_sweeps)
                coef = red.full_coef(yc, betas[f])
                pred = ybar + xva @ coef
                losses[f, gi] = np.mean((yva - pred) ** 2)
            mean_gi = losses[:, gi].mean()
            if mean_gi < best_mean:
                best_mean = mean_gi
                best = gi
            elif path_patience and gi - best >= path_patience:
                break
        mean_loss = losses.mean(axis=0)
        with np.errstate(invalid="ignore"):
            se_loss = losses.std(axis=0, ddof=1) / np.sqrt(n_folds)
        fit = self.fit_path(grid, best, tol, cv_tol, max_sweeps)
        result = CvResult(grid, mean_loss, se_loss, float(grid[best]),
                          self.seed)
        return result, fit


def lasso_cv(design: DesignMatrix, y: np.ndarray, factors: np.ndarray,
             folds: int = 5, grid_size: int = DEFAULT_GRID_SIZE,
             grid_ratio: float = DEFAULT_GRID_RATIO, seed: int = 0, *,
             tol: float = DEFAULT_TOL, cv_tol: float = DEFAULT_CV_TOL,
             max_sweeps: int = DEFAULT_MAX_SWEEPS,
             path_patience: int = DEFAULT_PATH_PATIENCE):
    """K-fold cross-validated lasso path; refits on all data at the best lam.

    Selection rule: the penalty minimizing mean validation MSE (first such
    entry on the decreasing grid, i.e. the most regularized minimizer).
    Fold-path fits run at ``cv_tol`` (their coefficients are never read);
    the full-data refit at the selected penalty converges at ``tol``.
    """
    ws = CvWorkspace(design, y, np.asarray(factors, dtype=float), folds,
                     seed)
    return ws.cv(grid_size, grid_ratio, tol, cv_tol, max_sweeps,
                 path_patience)


def cv_penalty_loss(design: DesignMatrix, y: np.ndarray,
                    penalties: np.ndarray, fold_ids: np.ndarray, *,
                    tol: float = DEFAULT_CV_TOL,
                    max_sweeps: int = DEFAULT_MAX_SWEEPS) -> float:
    """Mean validation MSE of a fixed absolute-penalty vector over given folds."""
    y = np.asarray(y, dtype=float)
    penalties = np.asarray(penalties, dtype=float)
    total = 0.0
    for f in range(int(fold_ids.max()) + 1):
        tr = fold_ids != f
        va = ~tr
        mu = design.values[tr].mean(axis=0)
        red = _Reduced(design.values[tr] - mu, penalties)
        ytr = y[tr]
        ybar = float(ytr.mean())
        yc = ytr - ybar
        beta_p = np.zeros(red.pen_idx.size)
        red.solve(red.project(yc), red.pen_factors, beta_p, tol, max_sweeps)
        coef = red.full_coef(yc, beta_p)
        pred = ybar + (design.values[va] - mu) @ coef
        total += np.mean((y[va] - pred) ** 2)
    return total / (int(fold_ids.max()) + 1)


def interaction_columns(xc: np.ndarray, z: np.ndarray):
    """Raw column block ``[xc | z | xc*z]`` plus a per-column kind map.

    Map entries are ``("main", j)``, ``("covariate", l)``, and
    ``("interaction", j, l)`` with ``j`` indexing ``xc`` columns and ``l``
    indexing ``z`` columns. Interaction columns are grouped by covariate.
    """
    xc = np.asarray(xc, dtype=float)
    z = np.asarray(z, dtype=float)
    if xc.shape[0] != z.shape[0]:
        raise ValueError("xc and z must have the same number of rows")
    if not np.isin(z, (0.0, 1.0)).all():
        raise ValueError("interaction covariates must be binary (0/1)")
    q = xc.shape[1]
    m = z.shape[1]
    blocks = [xc, z]
    colmap = [("main", j) for j in range(q)]
    colmap += [("covariate", l) for l in range(m)]
    for l in range(m):
        blocks.append(xc * z[:, l][:, None])
        colmap += [("interaction", j, l) for j in range(q)]
    return np.hstack(blocks), colmap


def interaction_design(xc: np.ndarray, z: np.ndarray):
    """Standardized pairwise-interaction design; see :func:`interaction_columns`."""
    raw, colmap = interaction_columns(xc, z)
    return standardize(raw), colmap


def interaction_position(q: int, m: int, j: int, l: int) -> int:
    """Column position of the ``("interaction", j, l)`` term."""
    return q + m + l * q + j

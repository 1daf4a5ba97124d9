"""Synthetic benchmarks: generators, ground truth, metrics, campaign runner.

Three scenarios are provided:

* ``hetero``   - binary variables whose effects switch on only where two
                 randomly chosen binary covariates are both 1;
* ``transfer`` - a larger variant in which half of the (all non-null)
                 variables have homogeneous effects and the other half
                 interact, so that zeroing the binary covariates switches
                 the interacting ones off (covariate-shift evaluation);
* ``blocks``   - Markov-correlated binary columns grouped into contiguous
                 blocks, block-level inference, with global effects plus
                 effects local to one half of the sample.

The truth model stores, per variable, additive terms
``coef * prod 1(z[c] == v)`` so each scenario's per-individual
coefficients can be re-evaluated under any covariate matrix (including
shifted ones).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .config import RunConfig
from .data import BlockMap, DataBundle, PartitionSet
from .filters import (DiscoverySet, LkfConfig, alkf, fixed_lkf, global_kf,
                      naive_lkf, split_lkf)
from .knockoffs import CondBernoulliModel, gen_bernoulli_knockoffs
from .lasso import FitOptions
from .partition import PartitionConfig
from .rng import derive_rng, derive_seed
from .robust import PcConfig, RobustDiscoverySet, robust_alkf
from .scores import ScoreConfig


@dataclass(frozen=True)
class TruthModel:
    """Ground truth: per-variable effect terms and covariate main effects.

    ``terms[j]`` is a tuple of ``(coef, conds)`` entries; the coefficient
    of variable j for an individual with covariates z is the sum of
    ``coef`` over terms whose conditions ``(cov, value)`` all hold.
    """

    terms: tuple
    gamma: np.ndarray
    noise_sd: float = 1.0

    @property
    def p(self) -> int:
        return len(self.terms)

    def coef_matrix(self, z: np.ndarray) -> np.ndarray:
        """Per-individual coefficients, shape (n, p)."""
        n = z.shape[0]
        out = np.zeros((n, self.p))
        for j, terms in enumerate(self.terms):
            for coef, conds in terms:
                active = np.ones(n, dtype=bool)
                for cov, value in conds:
                    active &= z[:, cov] == value
                out[active, j] += coef
        return out

    def nonnull_variables(self, z: np.ndarray) -> np.ndarray:
        """Variables with a nonzero coefficient for someone in the sample."""
        return np.flatnonzero(np.any(self.coef_matrix(z) != 0, axis=0))

    def sample_outcome(self, x: np.ndarray, z: np.ndarray,
                       seed: int) -> np.ndarray:
        coefs = self.coef_matrix(z)
        mean = np.sum(x * coefs, axis=1) + z @ self.gamma
        noise = derive_rng(seed, "outcome-noise").standard_normal(len(mean))
        return mean + self.noise_sd * noise


@dataclass(frozen=True)
class ScenarioData:
    bundle: DataBundle
    truth: TruthModel
    blocks: Optional[BlockMap] = None
    robust_variables: Optional[np.ndarray] = None


def _ar_latent(rng, n: int, width: int, rho: float = 0.5) -> np.ndarray:
    """Stationary AR(1) columns with unit marginal variance."""
    out = np.empty((n, width))
    out[:, 0] = rng.standard_normal(n)
    scale = np.sqrt(1.0 - rho ** 2)
    for t in range(1, width):
        out[:, t] = rho * out[:, t - 1] + scale * rng.standard_normal(n)
    return out


def _hetero_like(n: int, seed: int, p: int, m_binary: int, n_null: int,
                 interacting: Optional[np.ndarray] = None):
    """Common machinery of the hetero and transfer generators.

    Covariates: ``m_binary`` symmetric Bernoulli columns, then three times
    as many continuous columns in [0, 1] from a normal-CDF transform
    (shifted by -1) of an AR(0.5) latent vector; the first ``p``
    continuous columns double as the Bernoulli success probabilities of
    the variables.
    """
    rng_z = derive_rng(seed, "covariates")
    z_bin = (rng_z.random((n, m_binary)) < 0.5).astype(float)
    z_cont = ndtr(_ar_latent(rng_z, n, 3 * m_binary) - 1.0)
    z = np.hstack([z_bin, z_cont])
    model = CondBernoulliModel(m_binary + np.arange(p))
    x = gen_bernoulli_knockoffs(z, model, derive_seed(seed, "variables"))
    xk = gen_bernoulli_knockoffs(z, model, derive_seed(seed, "knockoffs"))

    rng_eff = derive_rng(seed, "effects")
    signs = rng_eff.choice([-4.0, 4.0], size=p)
    pair_idx = rng_eff.integers(0, m_binary, size=(p, 2))
    m = z.shape[1]
    gamma = np.zeros(m)
    half = m // 2
    hits = rng_eff.choice(half, size=half // 2, replace=False) + half
    gamma[hits] = rng_eff.choice([-4.0, 4.0], size=len(hits))

    terms = []
    for j in range(p):
        if j < n_null:
            terms.append(())
        elif interacting is None or j in interacting:
            conds = ((int(pair_idx[j, 0]), 1.0), (int(pair_idx[j, 1]), 1.0))
            terms.append(((signs[j], conds),))
        else:
            terms.append(((signs[j], ()),))
    truth = TruthModel(tuple(terms), gamma)
    y = truth.sample_outcome(x, z, derive_seed(seed, "noise"))
    return DataBundle(x, xk, y, z), truth, model


def gen_hetero(n: int, seed: int) -> ScenarioData:
    """p=20 binary variables, m=80 covariates (20 binary + 60 continuous).

    Variables 0-9 are null; variables 10-19 carry coefficient +-4 active
    only where two randomly chosen binary covariates are both 1. Half of
    the last 40 covariates carry main effects of magnitude 4.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    bundle, truth, _ = _hetero_like(n, seed, p=20, m_binary=20, n_null=10)
    return ScenarioData(bundle, truth)


def shift_robust_variables(truth: TruthModel, z: np.ndarray,
                           binary_covariates: Sequence[int]) -> np.ndarray:
    """Variables still non-null when the listed covariates are zeroed."""
    z_shift = np.array(z, dtype=float)
    z_shift[:, np.asarray(binary_covariates, dtype=int)] = 0.0
    return truth.nonnull_variables(z_shift)


def gen_transfer(n: int, seed: int) -> ScenarioData:
    """p=40, m=160 (40 binary + 120 continuous); every variable non-null.

    A random half of the variables interact with two binary covariates;
    the rest have homogeneous effects and remain associated when the
    binary covariates are all forced to zero.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    pick_rng = derive_rng(seed, "interacting-half")
    interacting = np.sort(pick_rng.choice(40, size=20, replace=False))
    bundle, truth, _ = _hetero_like(n, seed, p=40, m_binary=40, n_null=0,
                                    interacting=set(interacting.tolist()))
    robust = shift_robust_variables(truth, bundle.z, np.arange(40))
    return ScenarioData(bundle, truth, robust_variables=robust)


def _markov_block(rng, n: int, width: int, q: float,
                  rho: float = 0.5) -> np.ndarray:
    cols = np.empty((n, width))
    cols[:, 0] = rng.random(n) < q
    for t in range(1, width):
        keep = rng.random(n) < rho
        fresh = rng.random(n) < q
        cols[:, t] = np.where(keep, cols[:, t - 1], fresh)
    return cols.astype(float)


def gen_blocks(n: int, seed: int, n_blocks: int = 20, width: int = 3,
               amplitude: float = 20.0,
               nonnull_frac: float = 0.2) -> ScenarioData:
    """Correlated binary columns in contiguous blocks; block-level truth.

    Each block is a short Markov chain with its own marginal frequency;
    knockoffs are an independent redraw of the whole block, so swapping a
    full block (never single columns) preserves the joint law. One column
    per affected block carries the signal: half of the affected blocks get
    a global effect, half an effect confined to the rows with the first
    covariate equal to 0. Effects scale like ``amplitude / sqrt(n)``,
    local ones divided by the square root of the affected fraction.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng_param = derive_rng(seed, "block-params")
    freqs = rng_param.uniform(0.2, 0.8, size=n_blocks)
    rng_x = derive_rng(seed, "variables")
    rng_xk = derive_rng(seed, "knockoffs")
    x = np.hstack([_markov_block(rng_x, n, width, q) for q in freqs])
    xk = np.hstack([_markov_block(rng_xk, n, width, q) for q in freqs])
    rng_z = derive_rng(seed, "covariates")
    z = (rng_z.random((n, 2)) < 0.5).astype(float)

    rng_eff = derive_rng(seed, "effects")
    p = n_blocks * width
    n_signal = max(1, round(nonnull_frac * n_blocks))
    hit_blocks = np.sort(rng_eff.choice(n_blocks, size=n_signal,
                                        replace=False))
    local_flags = np.zeros(n_signal, dtype=bool)
    local_flags[rng_eff.choice(n_signal, size=n_signal // 2,
                               replace=False)] = True
    base = amplitude / np.sqrt(n)
    terms = [() for _ in range(p)]
    for b, is_local in zip(hit_blocks, local_flags):
        j = int(b) * width + int(rng_eff.integers(0, width))
        sign = float(rng_eff.choice([-1.0, 1.0]))
        if is_local:
            coef = sign * base / np.sqrt(0.5)
            terms[j] = ((coef, ((0, 0.0),)),)
        else:
            terms[j] = ((sign * base, ()),)
    truth = TruthModel(tuple(terms), np.zeros(2))
    y = truth.sample_outcome(x, z, derive_seed(seed, "noise"))
    blocks = BlockMap((width,) * n_blocks)
    return ScenarioData(DataBundle(x, xk, y, z), truth, blocks=blocks)


def generate(scenario: str, n: int, seed: int, cfg: RunConfig) -> ScenarioData:
    if scenario == "hetero":
        return gen_hetero(n, seed)
    if scenario == "transfer":
        return gen_transfer(n, seed)
    if scenario == "blocks":
        return gen_blocks(n, seed, n_blocks=cfg.blocks_count,
                          width=cfg.blocks_width,
                          amplitude=cfg.blocks_amplitude,
                          nonnull_frac=cfg.blocks_nonnull_frac)
    raise ValueError(f"unknown scenario {scenario!r}")


# -- metrics ---------------------------------------------------------------

def _discovery_units(disc, truth: TruthModel):
    """Normalize a discovery set to (pairs, partition, blocks, rows)."""
    if isinstance(disc, RobustDiscoverySet):
        pairs = [(j, 1) for j in disc.rejected]
        return pairs, PartitionSet.trivial(truth.p), None, disc.rows
    pairs = [(hid.variable, hid.label) for hid in disc.rejected]
    return pairs, disc.partition, disc.blocks, disc.rows


def _unit_hits(pairs, partition, blocks, rows, truth, z):
    """Per discovery: (unit, member rows mask of affected individuals)."""
    if rows is None:
        rows = np.arange(z.shape[0])
    z_eval = z[rows]
    coefs = truth.coef_matrix(z_eval)
    out = []
    for unit, label in pairs:
        members = blocks.members(unit) if blocks is not None else [unit]
        in_group = partition.labels_for(unit, z_eval) == label
        affected = np.any(coefs[:, members] != 0, axis=1) & in_group
        out.append((unit, in_group, affected))
    return out, coefs


def metric_fdp(disc, truth: TruthModel, z: np.ndarray) -> float:
    """Fraction of discoveries with no affected individual in their subgroup."""
    pairs, partition, blocks, rows = _discovery_units(disc, truth)
    if not pairs:
        return 0.0
    hits, _ = _unit_hits(pairs, partition, blocks, rows, truth, z)
    n_false = sum(1 for _, _, affected in hits if not affected.any())
    return n_false / max(1, len(pairs))


def metric_power(disc, truth: TruthModel, z: np.ndarray) -> float:
    """Fraction of non-null units discovered in a subgroup that they affect."""
    pairs, partition, blocks, rows = _discovery_units(disc, truth)
    eval_rows = np.arange(z.shape[0]) if rows is None else rows
    coefs = truth.coef_matrix(z[eval_rows])
    if blocks is not None:
        nonnull = {int(b) for b in range(blocks.n_blocks)
                   if np.any(coefs[:, blocks.members(b)] != 0)}
    else:
        nonnull = {int(j) for j in
                   np.flatnonzero(np.any(coefs != 0, axis=0))}
    if not nonnull:
        return float("nan")
    hits, _ = _unit_hits(pairs, partition, blocks, rows, truth, z)
    found = {unit for unit, _, affected in hits if affected.any()}
    return len(found & nonnull) / len(nonnull)


def metric_homogeneity(disc, truth: TruthModel, z: np.ndarray,
                       include_false: bool = True) -> float:
    """Mean, over discoveries, of the affected fraction of their subgroup.

    Empty discovery sets give ``nan`` (excluded from aggregation). With
    ``include_false`` off, only discoveries containing at least one
    affected individual enter the average.
    """
    pairs, partition, blocks, rows = _discovery_units(disc, truth)
    if not pairs:
        return float("nan")
    shares = []
    hits, _ = _unit_hits(pairs, partition, blocks, rows, truth, z)
    for _, in_group, affected in hits:
        size = int(in_group.sum())
        share = affected.sum() / size if size else 0.0
        if include_false or affected.any():
            shares.append(share)
    return float(np.mean(shares)) if shares else float("nan")


def rejected_variables(disc) -> np.ndarray:
    """Variable indices touched by any rejection (blocks expanded)."""
    if isinstance(disc, RobustDiscoverySet):
        return np.array(sorted(disc.rejected), dtype=int)
    units = {hid.variable for hid in disc.rejected}
    if disc.blocks is not None:
        vars_ = sorted({int(j) for b in units
                        for j in disc.blocks.members(b)})
        return np.array(vars_, dtype=int)
    return np.array(sorted(units), dtype=int)


def shift_fdp(disc, robust_variables: np.ndarray) -> float:
    """Under covariate shift only robust variables count as true findings."""
    rejected = rejected_variables(disc)
    if rejected.size == 0:
        return 0.0
    robust = set(int(j) for j in robust_variables)
    n_false = sum(1 for j in rejected if int(j) not in robust)
    return n_false / max(1, len(rejected))


def shift_power(disc, robust_variables: np.ndarray) -> float:
    robust = set(int(j) for j in robust_variables)
    if not robust:
        return float("nan")
    rejected = set(int(j) for j in rejected_variables(disc))
    return len(rejected & robust) / len(robust)


# -- campaign runner -------------------------------------------------------

@dataclass(frozen=True)
class MetricsRecord:
    method: str
    replicate: int
    n: int
    seed: int
    fdp: float
    power: float
    homogeneity: float
    n_rejections: int
    runtime_ms: float


def build_lkf_config(cfg: RunConfig,
                     blocks: Optional[BlockMap] = None) -> LkfConfig:
    cfg = cfg.resolved()
    opts = FitOptions(cv_folds=cfg.cv_folds, grid_size=cfg.lambda_grid_size,
                      grid_ratio=cfg.lambda_grid_ratio)
    return LkfConfig(
        partition=PartitionConfig(g_max=cfg.g_max, c_main=cfg.c_main,
                                  prescreen=cfg.prescreen),
        scores=ScoreConfig(path=cfg.score_path, use_prior=cfg.use_prior,
                           zeta_offset=cfg.zeta_offset,
                           xi_grid=tuple(cfg.xi_grid),
                           min_subgroup=cfg.min_subgroup, opts=opts),
        cloak_prob=cfg.cloak_prob,
        blocks=blocks,
    )


def run_method(method: str, data: ScenarioData, alpha: float, seed: int,
               cfg: RunConfig):
    """Dispatch one method on one dataset; returns its discovery set."""
    lkf_cfg = build_lkf_config(cfg, blocks=data.blocks)
    d = data.bundle
    if method == "alkf":
        return alkf(d, alpha, lkf_cfg, seed)[1]
    if method == "global_kf":
        return global_kf(d, alpha, seed, opts=lkf_cfg.scores.opts)
    if method == "split_lkf":
        return split_lkf(d, alpha, lkf_cfg, seed)
    if method == "naive_lkf":
        return naive_lkf(d, alpha, lkf_cfg, seed)
    if method == "fixed_lkf":
        return fixed_lkf(d, cfg.fixed_env_covariates, alpha, seed,
                         opts=lkf_cfg.scores.opts,
                         min_subgroup=cfg.min_subgroup)
    if method == "robust_alkf":
        pc = PcConfig(r_rule=cfg.pc_r_rule, seqstep_c=cfg.pc_c)
        return robust_alkf(d, alpha, lkf_cfg, pc, seed)[1]
    raise ValueError(f"unknown method {method!r}")


def run_replicate(cfg: RunConfig, n: int, rep: int):
    """All configured methods on one shared dataset; never raises."""
    cfg = cfg.resolved()
    records, failures = [], []
    data_seed = derive_seed(cfg.master_seed, "data", cfg.scenario, n, rep)
    data = generate(cfg.scenario, n, data_seed, cfg)
    z = data.bundle.z
    for method in cfg.methods:
        seed = derive_seed(cfg.master_seed, "run", method, n, rep)
        start = time.perf_counter()
        try:
            disc = run_method(method, data, cfg.alpha, seed, cfg)
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            failures.append((method, n, rep, f"{type(exc).__name__}: {exc}"))
            continue
        elapsed = (time.perf_counter() - start) * 1000.0
        n_rej = disc.n_rejected
        records.append(MetricsRecord(
            method, rep, n, seed,
            metric_fdp(disc, data.truth, z),
            metric_power(disc, data.truth, z),
            metric_homogeneity(disc, data.truth, z,
                               include_false=cfg.homogeneity_all),
            n_rej, elapsed))
        if cfg.scenario == "transfer":
            records.append(MetricsRecord(
                method + "_shift", rep, n, seed,
                shift_fdp(disc, data.robust_variables),
                shift_power(disc, data.robust_variables),
                float("nan"), n_rej, 0.0))
    return records, failures


def _replicate_task(args):
    cfg, n, rep = args
    return n, rep, run_replicate(cfg, n, rep)


def run_experiment(cfg: RunConfig, threads: Optional[int] = None):
    """Full campaign: every (n, replicate) cell, all methods, aggregated.

    Returns (records, failures). Records are ordered by (n, replicate,
    method position); per-replicate failures are recorded and do not stop
    the run.
    """
    cfg = cfg.resolved()
    if threads is None:
        threads = cfg.threads if cfg.threads is not None else 1
    tasks = [(cfg, n, rep) for n in cfg.n for rep in range(cfg.replicates)]
    results = []
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    records, failures = [], []
    for _, _, (recs, fails) in results:
        records.extend(recs)
        failures.extend(fails)
    return records, failures


def aggregate_records(records) -> list:
    """Mean and Monte-Carlo standard error per (method, n, metric)."""
    groups = {}
    for r in records:
        groups.setdefault((r.method, r.n), []).append(r)
    out = []
    for (method, n), recs in sorted(groups.items()):
        for metric in ("fdp", "power", "homogeneity", "n_rejections"):
            vals = np.array([getattr(r, metric) for r in recs], dtype=float)
            vals = vals[~np.isnan(vals)]
            if vals.size == 0:
                mean, se = float("nan"), float("nan")
            else:
                mean = float(vals.mean())
                se = float(vals.std(ddof=1) / np.sqrt(vals.size)) \
                    if vals.size > 1 else 0.0
            out.append({"method": method, "n": n, "metric": metric,
                        "mean": mean, "mc_se": se,
                        "n_replicates": int(vals.size)})
    return out


def write_records_csv(records, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "replicate", "n", "seed", "fdp", "power",
                    "homogeneity", "n_rejections", "runtime_ms"])
        for r in records:
            w.writerow([r.method, r.replicate, r.n, r.seed,
                        repr(float(r.fdp)), repr(float(r.power)),
                        repr(float(r.homogeneity)), r.n_rejections,
                        int(round(r.runtime_ms))])


def write_aggregate_csv(aggregates, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n", "metric", "mean", "mc_se",
                    "n_replicates"])
        for row in aggregates:
            w.writerow([row["method"], row["n"], row["metric"],
                        repr(float(row["mean"])), repr(float(row["mc_se"])),
                        row["n_replicates"]])
